// SPDX-License-Identifier: Apache-2.0
#include "fedmd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

#include "fedmd/error.hpp"

namespace fedmd {

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw DataError("dataset " + name + ": " + std::to_string(features.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError("dataset " + name + ": label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string subset_name) const {
  Dataset out;
  out.features = features.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  out.num_classes = num_classes;
  out.name = subset_name.empty() ? name : std::move(subset_name);
  out.origin.assign(indices.begin(), indices.end());
  return out;
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> hist(num_classes, 0);
  for (int y : labels) {
    if (y >= 0 && static_cast<std::size_t>(y) < num_classes) ++hist[static_cast<std::size_t>(y)];
  }
  return hist;
}

Dataset concat(std::span<const Dataset> parts, std::string name) {
  if (parts.empty()) {
    throw DataError("concat of no datasets");
  }
  const std::size_t dim = parts.front().dim();
  std::vector<float> values;
  Dataset out;
  out.name = std::move(name);
  for (const auto& p : parts) {
    if (p.dim() != dim) {
      throw ShapeError("concat: feature dims " + std::to_string(dim) + " and " + std::to_string(p.dim()));
    }
    values.insert(values.end(), p.features.values().begin(), p.features.values().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.origin.insert(out.origin.end(), p.origin.begin(), p.origin.end());
    out.num_classes = std::max(out.num_classes, p.num_classes);
  }
  out.features = Tensor::matrix(out.labels.size(), dim, std::move(values));
  if (out.origin.size() != out.labels.size()) out.origin.clear();
  return out;
}

// --- IDX ------------------------------------------------------------------

namespace {

constexpr std::uint8_t kIdxUnsignedByte = 0x08;

struct IdxHeader {
  std::vector<std::size_t> dims;
  std::size_t payload_offset = 0;
  std::size_t payload_size = 0;
};

IdxHeader parse_idx_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw ParseError(bytes.size(), "IDX stream shorter than the 4-byte magic");
  }
  if (bytes[0] != 0 || bytes[1] != 0) {
    throw ParseError(0, "IDX magic must start with two zero bytes");
  }
  if (bytes[2] != kIdxUnsignedByte) {
    throw ParseError(2, "unsupported IDX type code " + std::to_string(bytes[2]));
  }
  const std::size_t ndims = bytes[3];
  if (ndims == 0) {
    throw ParseError(3, "IDX stream declares zero dimensions");
  }
  IdxHeader header;
  std::size_t offset = 4;
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    if (bytes.size() < offset + 4) {
      throw ParseError(bytes.size(), "truncated IDX dimension " + std::to_string(d));
    }
    const std::uint32_t dim = (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
                              (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
    if (dim == 0) {
      throw ParseError(offset, "IDX dimension " + std::to_string(d) + " is zero");
    }
    count *= dim;
    if (count > (std::uint64_t{1} << 40)) {
      throw ParseError(offset, "IDX payload size overflows");
    }
    header.dims.push_back(dim);
    offset += 4;
  }
  header.payload_offset = offset;
  header.payload_size = static_cast<std::size_t>(count);
  if (bytes.size() - offset < header.payload_size) {
    throw ParseError(bytes.size(), "truncated IDX payload: need " + std::to_string(header.payload_size) +
                                       " bytes, have " + std::to_string(bytes.size() - offset));
  }
  if (bytes.size() - offset > header.payload_size) {
    throw ParseError(offset + header.payload_size, "trailing bytes after IDX payload");
  }
  return header;
}

}  // namespace

Tensor parse_idx(std::span<const std::uint8_t> bytes) {
  const IdxHeader header = parse_idx_header(bytes);
  std::vector<float> values(header.payload_size);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(bytes[header.payload_offset + i]) / 255.0f;
  }
  return Tensor(header.dims, std::move(values));
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const IdxHeader header = parse_idx_header(bytes);
  if (header.dims.size() != 1) {
    throw ParseError(3, "label file must be 1-D, got " + std::to_string(header.dims.size()) + " dimensions");
  }
  const auto payload = bytes.subspan(header.payload_offset, header.payload_size);
  return std::vector<int>(payload.begin(), payload.end());
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, std::string name) {
  Tensor images = parse_idx(read_file_bytes(images_path));
  std::vector<int> labels = parse_idx_labels(read_file_bytes(labels_path));
  if (images.rows() != labels.size()) {
    throw DataError(images_path + " has " + std::to_string(images.rows()) + " images but " + labels_path + " has " +
                    std::to_string(labels.size()) + " labels");
  }
  Dataset out;
  out.features = images.flattened();
  out.num_classes = labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  out.labels = std::move(labels);
  out.name = std::move(name);
  return out;
}

// --- synthetic blobs -------------------------------------------------------

BlobGenerator::BlobGenerator(std::size_t num_classes, std::size_t dim, double spread, std::uint64_t seed,
                             bool orthogonal)
    : dim_(dim), spread_(spread) {
  if (num_classes == 0 || dim == 0) {
    throw ConfigError("blobs need at least one class and one dimension");
  }
  if (!(spread > 0.0)) {
    throw ConfigError("blob spread must be positive");
  }
  if (orthogonal && num_classes > dim) {
    throw ConfigError("orthogonal centers need classes <= dim");
  }
  Rng rng = derive_rng(seed, "centers");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<double> center(dim);
    double norm = 0.0;
    do {
      for (double& x : center) x = normal(rng);
      if (orthogonal) {
        for (const auto& prev : centers_) {
          double dot = 0.0;
          for (std::size_t i = 0; i < dim; ++i) dot += center[i] * prev[i];
          dot /= kCenterRadius * kCenterRadius;
          for (std::size_t i = 0; i < dim; ++i) center[i] -= dot * prev[i];
        }
      }
      norm = std::sqrt(std::inner_product(center.begin(), center.end(), center.begin(), 0.0));
    } while (norm < 1e-6);
    for (double& x : center) x *= kCenterRadius / norm;
    centers_.push_back(std::move(center));
  }
}

Dataset BlobGenerator::draw(std::size_t per_class, std::uint64_t noise_seed, std::string name) const {
  Rng rng = derive_rng(noise_seed, "noise");
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  out.num_classes = centers_.size();
  out.name = std::move(name);
  std::vector<float> values;
  values.reserve(per_class * centers_.size() * dim_);
  for (std::size_t c = 0; c < centers_.size(); ++c) {
    for (std::size_t n = 0; n < per_class; ++n) {
      for (std::size_t i = 0; i < dim_; ++i) {
        values.push_back(static_cast<float>(centers_[c][i] + spread_ * normal(rng)));
      }
      out.labels.push_back(static_cast<int>(c));
    }
  }
  out.features = Tensor::matrix(out.labels.size(), dim_, std::move(values));
  return out;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                    std::uint64_t seed) {
  if (per_class == 0) {
    throw ConfigError("blobs need at least one sample per class");
  }
  return BlobGenerator(num_classes, dim, spread, seed).draw(per_class, seed, "blobs");
}

// --- partitioning ----------------------------------------------------------

void PartitionPlan::validate() const {
  if (parties == 0) throw ConfigError("partition plan needs at least one party");
  if (samples_per_class_per_party == 0) throw ConfigError("samples_per_class_per_party must be at least 1");
  if (mode == PartitionMode::noniid && subclass_to_superclass.empty()) {
    throw ConfigError("noniid partition needs a subclass_to_superclass map");
  }
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_label(const Dataset& source) {
  std::size_t classes = source.num_classes;
  for (int y : source.labels) classes = std::max(classes, static_cast<std::size_t>(y) + 1);
  std::vector<std::vector<std::size_t>> by_label(classes);
  for (std::size_t i = 0; i < source.size(); ++i) by_label[static_cast<std::size_t>(source.labels[i])].push_back(i);
  return by_label;
}

Dataset remainder_of(const Dataset& source, const std::vector<bool>& taken) {
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  if (rest.empty()) {
    Dataset empty;
    empty.features = Tensor::zeros(0, source.dim());
    empty.num_classes = source.num_classes;
    empty.name = source.name + "/remainder";
    return empty;
  }
  return source.subset(rest, source.name + "/remainder");
}

}  // namespace

Partition partition_iid(const Dataset& source, const PartitionPlan& plan) {
  plan.validate();
  source.validate();
  const std::size_t n = plan.samples_per_class_per_party;
  auto by_label = indices_by_label(source);
  Rng rng = derive_rng(plan.seed, "partition-iid");
  for (std::size_t c = 0; c < by_label.size(); ++c) {
    if (by_label[c].size() < plan.parties * n) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(by_label[c].size()) +
                        " samples, need " + std::to_string(plan.parties * n));
    }
    std::shuffle(by_label[c].begin(), by_label[c].end(), rng);
  }
  Partition out;
  std::vector<bool> taken(source.size(), false);
  for (std::size_t k = 0; k < plan.parties; ++k) {
    std::vector<std::size_t> mine;
    for (const auto& idx : by_label) {
      for (std::size_t i = 0; i < n; ++i) {
        mine.push_back(idx[k * n + i]);
        taken[idx[k * n + i]] = true;
      }
    }
    out.parties.push_back(source.subset(mine, source.name + "/party" + std::to_string(k)));
  }
  out.remainder = remainder_of(source, taken);
  return out;
}

Partition partition_noniid(const Dataset& source, const PartitionPlan& plan) {
  plan.validate();
  source.validate();
  const std::size_t n = plan.samples_per_class_per_party;
  auto by_label = indices_by_label(source);

  std::map<int, std::vector<int>> subclasses;
  for (std::size_t c = 0; c < by_label.size(); ++c) {
    if (by_label[c].empty()) continue;
    auto it = plan.subclass_to_superclass.find(static_cast<int>(c));
    if (it == plan.subclass_to_superclass.end()) {
      throw ConfigError("subclass " + std::to_string(c) + " has no superclass");
    }
    subclasses[it->second].push_back(static_cast<int>(c));
  }
  int max_super = 0;
  for (const auto& [sub, super] : plan.subclass_to_superclass) {
    if (super < 0) throw ConfigError("superclass of subclass " + std::to_string(sub) + " is negative");
    max_super = std::max(max_super, super);
  }
  for (const auto& [super, subs] : subclasses) {
    if (subs.size() < plan.parties) {
      throw ConfigError("superclass " + std::to_string(super) + " has " + std::to_string(subs.size()) +
                        " subclasses, fewer than the " + std::to_string(plan.parties) + " parties");
    }
  }

  Rng rng = derive_rng(plan.seed, "partition-noniid");
  Partition out;
  out.assigned_subclasses.resize(plan.parties);
  std::vector<bool> taken(source.size(), false);
  std::vector<std::vector<std::size_t>> mine(plan.parties);
  for (const auto& [super, subs] : subclasses) {
    const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, subs.size() - 1)(rng);
    for (std::size_t k = 0; k < plan.parties; ++k) {
      const int sub = subs[(k + offset) % subs.size()];
      out.assigned_subclasses[k][super] = sub;
      auto pool = by_label[static_cast<std::size_t>(sub)];
      if (pool.size() < n) {
        throw ConfigError("subclass " + std::to_string(sub) + " has " + std::to_string(pool.size()) +
                          " samples, need " + std::to_string(n));
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t i = 0; i < n; ++i) {
        mine[k].push_back(pool[i]);
        taken[pool[i]] = true;
      }
    }
  }
  for (std::size_t k = 0; k < plan.parties; ++k) {
    std::sort(mine[k].begin(), mine[k].end());
    Dataset party = source.subset(mine[k], source.name + "/party" + std::to_string(k));
    for (int& y : party.labels) y = plan.subclass_to_superclass.at(y);
    party.num_classes = static_cast<std::size_t>(max_super) + 1;
    out.parties.push_back(std::move(party));
  }
  out.remainder = remainder_of(source, taken);
  return out;
}

Dataset relabel_to_superclass(const Dataset& source, const std::map<int, int>& subclass_to_superclass,
                              std::string name) {
  Dataset out = source;
  out.name = std::move(name);
  int max_super = 0;
  for (const auto& [sub, super] : subclass_to_superclass) max_super = std::max(max_super, super);
  for (int& y : out.labels) {
    auto it = subclass_to_superclass.find(y);
    if (it == subclass_to_superclass.end()) {
      throw DataError("label " + std::to_string(y) + " has no superclass");
    }
    y = it->second;
  }
  out.num_classes = static_cast<std::size_t>(max_super) + 1;
  return out;
}

Dataset filter_labels(const Dataset& source, std::span<const int> keep, std::string name) {
  const std::set<int> wanted(keep.begin(), keep.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (wanted.count(source.labels[i])) rows.push_back(i);
  }
  if (rows.empty()) {
    Dataset empty;
    empty.features = Tensor::zeros(0, source.dim());
    empty.num_classes = source.num_classes;
    empty.name = std::move(name);
    return empty;
  }
  return source.subset(rows, std::move(name));
}

std::pair<Dataset, Dataset> split(const Dataset& source, double second_fraction, Rng& rng) {
  if (second_fraction <= 0.0 || second_fraction >= 1.0) {
    throw ConfigError("split fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto second = static_cast<std::size_t>(std::round(second_fraction * static_cast<double>(source.size())));
  if (second == 0 || second >= source.size()) {
    throw ConfigError("split of " + std::to_string(source.size()) + " rows leaves an empty part");
  }
  std::vector<std::size_t> a(order.begin(), order.end() - static_cast<std::ptrdiff_t>(second));
  std::vector<std::size_t> b(order.end() - static_cast<std::ptrdiff_t>(second), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {source.subset(a, source.name + "/train"), source.subset(b, source.name + "/validation")};
}

}  // namespace fedmd
