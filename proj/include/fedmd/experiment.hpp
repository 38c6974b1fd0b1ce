// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedmd/dataset.hpp"
#include "fedmd/metrics.hpp"
#include "fedmd/protocol.hpp"

namespace fedmd {

enum class DataSource { blobs, idx };

/// Where the public, private and test data come from.
struct DataSpec {
  DataSource source = DataSource::blobs;
  PartitionMode mode = PartitionMode::iid;

  // blobs: public task
  std::size_t dim = 16;
  std::size_t public_classes = 6;
  std::size_t public_per_class = 500;
  double public_spread = 4.0;
  // blobs: private task. In noniid mode the private generator has
  // superclasses * subclasses_per_superclass clusters.
  std::size_t num_classes = 6;
  double private_spread = 1.5;
  std::size_t private_pool_per_class = 60;
  std::size_t test_per_class = 200;
  std::size_t superclasses = 3;
  std::size_t subclasses_per_superclass = 2;
  bool orthogonal_centers = false;

  // idx
  std::string public_images, public_labels;
  std::string private_images, private_labels;
  std::string test_images, test_labels;

  std::size_t samples_per_class_per_party = 3;
  double public_validation_fraction = 0.1;

  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct ExperimentConfig {
  CollaborationConfig collab;
  DataSpec data;
  // Hidden-layer widths per party; length equals collab.parties.
  std::vector<std::vector<std::size_t>> architectures;
  bool pooled = true;
  TransportKind transport = TransportKind::in_process;
  std::string address = "127.0.0.1:0";
  std::string output_dir;  // empty: no files written

  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// The ten hidden-layer configurations of the canonical heterogeneous cohort.
const std::vector<std::vector<std::size_t>>& canonical_architectures();

/// "blobs-10": 10 heterogeneous MLPs, 6 classes, 3 private samples per class.
ExperimentConfig blobs10_config(std::uint64_t seed);

/// Two parties, 3 superclasses x 2 subclasses, one subclass per superclass each.
ExperimentConfig noniid_superclass_config(std::uint64_t seed);

struct ExperimentData {
  PublicData pub;
  Partition partition;
  Dataset test;  // labels in the private task's label space (superclasses for noniid)
  Dataset test_subclasses;  // noniid: test set with subclass labels
  std::map<int, int> subclass_to_superclass;
  std::size_t num_outputs = 0;
};

ExperimentData build_data(const ExperimentConfig& config);

/// The party's untrained network, seeded by (seed, party, "init").
Network make_network(const ExperimentConfig& config, std::size_t party, std::size_t input_dim,
                     std::size_t outputs);

std::vector<PartySetup> make_parties(const ExperimentConfig& config, const ExperimentData& data);

/// Pooled-data upper bound: continues each party's public-phase snapshot on
/// the union of all private sets.
std::vector<double> pooled_from_transfer(const ExperimentConfig& config, const ExperimentData& data,
                                         const std::vector<BaselineResult>& baselines);

/// Full transfer prologue followed by pooled private training, per party.
std::vector<double> baseline_pooled(const ExperimentConfig& config);

/// Transfer-only baselines, per party.
std::vector<double> baseline_transfer(const ExperimentConfig& config);

struct ExperimentResult {
  MetricsLog log;
  Summary summary;
};

/// Baselines, FedMD rounds, optional pooled rows. Writes metrics.csv and
/// summary.json when output_dir is set.
ExperimentResult run_experiment(const ExperimentConfig& config);

std::string version_string();

}  // namespace fedmd
