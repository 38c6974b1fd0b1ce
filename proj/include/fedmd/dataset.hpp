// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmd/rng.hpp"
#include "fedmd/tensor.hpp"

namespace fedmd {

/// Labeled samples. `origin` records, per row, the index of the sample in
/// the dataset it was drawn from (empty for generated data); partitioners
/// use it as provenance.
struct Dataset {
  Tensor features;  // N x d
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;
  std::vector<std::size_t> origin;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool empty() const noexcept { return labels.empty(); }

  /// Throws DataError when rows and labels disagree or a label is out of range.
  void validate() const;

  /// Rows in the given order; origin is rewritten to point into *this.
  Dataset subset(std::span<const std::size_t> indices, std::string subset_name = {}) const;

  std::vector<std::size_t> class_histogram() const;
};

Dataset concat(std::span<const Dataset> parts, std::string name);

// --- IDX ------------------------------------------------------------------

/// Parses an unsigned-byte IDX stream. Values are scaled by 1/255.
Tensor parse_idx(std::span<const std::uint8_t> bytes);

/// Parses a 1-D unsigned-byte IDX stream as integer labels.
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

/// Images + labels from a pair of IDX files. Images are flattened to N x (h*w).
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         std::string name);

// --- synthetic blobs -------------------------------------------------------

/// Gaussian clusters around centers on the radius-4 hypersphere. Centers are
/// fixed by the seed; draws with different noise seeds share them, which is
/// how train and held-out test sets of the same task are produced.
class BlobGenerator {
 public:
  static constexpr double kCenterRadius = 4.0;

  /// `orthogonal` Gram-Schmidt-orthogonalizes the random center directions
  /// (requires classes <= dim).
  BlobGenerator(std::size_t num_classes, std::size_t dim, double spread, std::uint64_t seed,
                bool orthogonal = false);

  Dataset draw(std::size_t per_class, std::uint64_t noise_seed, std::string name) const;

  const std::vector<std::vector<double>>& centers() const noexcept { return centers_; }
  std::size_t num_classes() const noexcept { return centers_.size(); }
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_;
  double spread_;
  std::vector<std::vector<double>> centers_;
};

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                    std::uint64_t seed);

// --- partitioning ----------------------------------------------------------

enum class PartitionMode { iid, noniid };

struct PartitionPlan {
  PartitionMode mode = PartitionMode::iid;
  std::size_t parties = 1;
  std::size_t samples_per_class_per_party = 3;
  // noniid only: source label (subclass) -> superclass.
  std::map<int, int> subclass_to_superclass;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Partition {
  std::vector<Dataset> parties;
  Dataset remainder;
  // noniid only: for each party, superclass -> the subclass it was assigned.
  std::vector<std::map<int, int>> assigned_subclasses;
};

Partition partition_iid(const Dataset& source, const PartitionPlan& plan);

/// Each party gets one subclass per superclass; party labels are superclass
/// indices. Remainder keeps the source (subclass) labels.
Partition partition_noniid(const Dataset& source, const PartitionPlan& plan);

/// Maps every label through the subclass -> superclass table.
Dataset relabel_to_superclass(const Dataset& source, const std::map<int, int>& subclass_to_superclass,
                              std::string name);

/// Rows whose label is in `keep`, labels unchanged.
Dataset filter_labels(const Dataset& source, std::span<const int> keep, std::string name);

/// Seeded split into (first, second) with `second_fraction` of rows in the second part.
std::pair<Dataset, Dataset> split(const Dataset& source, double second_fraction, Rng& rng);

}  // namespace fedmd
