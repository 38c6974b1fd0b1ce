// SPDX-License-Identifier: Apache-2.0
#include "fedmd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fedmd/config.hpp"
#include "fedmd/error.hpp"
#include "fedmd/train.hpp"

namespace fedmd {

namespace {

std::size_t label_count(const Dataset& d) {
  int hi = -1;
  for (int y : d.labels) hi = std::max(hi, y);
  return static_cast<std::size_t>(hi + 1);
}

std::map<int, int> superclass_map(const DataSpec& spec) {
  std::map<int, int> map;
  const std::size_t total = spec.superclasses * spec.subclasses_per_superclass;
  for (std::size_t s = 0; s < total; ++s) {
    map[static_cast<int>(s)] = static_cast<int>(s / spec.subclasses_per_superclass);
  }
  return map;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void ExperimentConfig::validate() const {
  collab.validate();
  require(architectures.size() == collab.parties,
          "architectures: " + std::to_string(architectures.size()) + " entries for " +
              std::to_string(collab.parties) + " parties");
  for (std::size_t k = 0; k < architectures.size(); ++k) {
    for (std::size_t w : architectures[k]) {
      require(w > 0, "architectures: party " + std::to_string(k) + " has a zero-width layer");
    }
  }
  const DataSpec& d = data;
  require(d.samples_per_class_per_party > 0, "samples_per_class_per_party: must be at least 1");
  require(d.public_validation_fraction > 0.0 && d.public_validation_fraction < 1.0,
          "public_validation_fraction: must be in (0, 1)");
  if (d.source == DataSource::blobs) {
    require(d.dim > 0, "dim: must be at least 1");
    require(d.public_classes >= 2, "public_classes: must be at least 2");
    require(d.public_per_class > 0, "public_per_class: must be at least 1");
    require(d.public_spread > 0.0, "public_spread: must be positive");
    require(d.private_spread > 0.0, "private_spread: must be positive");
    require(d.test_per_class > 0, "test_per_class: must be at least 1");
    require(d.private_pool_per_class > 0, "private_pool_per_class: must be at least 1");
    if (d.mode == PartitionMode::iid) {
      require(d.num_classes >= 2, "num_classes: must be at least 2");
    }
    const std::size_t clusters =
        d.mode == PartitionMode::iid ? d.num_classes : d.superclasses * d.subclasses_per_superclass;
    if (d.orthogonal_centers) {
      require(clusters <= d.dim, "orthogonal_centers: needs at most dim=" + std::to_string(d.dim) +
                                     " private clusters, got " + std::to_string(clusters));
    }
  } else {
    for (const auto& [key, path] : {std::pair{"public_images", &d.public_images},
                                    std::pair{"public_labels", &d.public_labels},
                                    std::pair{"private_images", &d.private_images},
                                    std::pair{"private_labels", &d.private_labels},
                                    std::pair{"test_images", &d.test_images},
                                    std::pair{"test_labels", &d.test_labels}}) {
      require(!path->empty(), std::string(key) + ": required when data_source is idx");
    }
  }
  if (d.mode == PartitionMode::noniid) {
    require(d.superclasses >= 2, "superclasses: must be at least 2");
    require(d.subclasses_per_superclass >= collab.parties,
            "subclasses_per_superclass: " + std::to_string(d.subclasses_per_superclass) +
                " is fewer than the " + std::to_string(collab.parties) + " parties");
  }
  require(!address.empty(), "address: must not be empty");
}

const std::vector<std::vector<std::size_t>>& canonical_architectures() {
  static const std::vector<std::vector<std::size_t>> archs = {
      {32}, {64}, {32, 32}, {64, 32}, {128}, {48, 48}, {96}, {64, 64}, {32, 64}, {96, 32}};
  return archs;
}

namespace {

void canonical_training(CollaborationConfig& c) {
  c.rounds = 10;
  c.subset_size = 512;
  c.digest_epochs = 4;
  c.digest_batch_size = 32;
  c.revisit_epochs = 2;
  c.revisit_batch_size = 4;
  c.public_batch_size = 32;
  c.private_batch_size = 4;
}

}  // namespace

ExperimentConfig blobs10_config(std::uint64_t seed) {
  ExperimentConfig config;
  config.collab.parties = 10;
  config.collab.seed = seed;
  canonical_training(config.collab);
  config.architectures = canonical_architectures();
  return config;
}

ExperimentConfig noniid_superclass_config(std::uint64_t seed) {
  ExperimentConfig config;
  config.collab.parties = 2;
  config.collab.seed = seed;
  canonical_training(config.collab);
  config.data.mode = PartitionMode::noniid;
  config.data.superclasses = 3;
  config.data.subclasses_per_superclass = 2;
  config.data.orthogonal_centers = true;
  config.data.samples_per_class_per_party = 20;
  config.data.private_pool_per_class = 40;
  config.architectures = {{64}, {32, 32}};
  config.pooled = false;
  return config;
}

ExperimentData build_data(const ExperimentConfig& config) {
  config.validate();
  const DataSpec& spec = config.data;
  const std::uint64_t seed = config.collab.seed;
  ExperimentData out;

  Dataset pub_all;
  Dataset pool;
  if (spec.source == DataSource::blobs) {
    BlobGenerator pub_gen(spec.public_classes, spec.dim, spec.public_spread, derive_seed(seed, "public"));
    pub_all = pub_gen.draw(spec.public_per_class, derive_seed(seed, "public-noise"), "public");
    const std::size_t clusters = spec.mode == PartitionMode::iid
                                     ? spec.num_classes
                                     : spec.superclasses * spec.subclasses_per_superclass;
    BlobGenerator priv_gen(clusters, spec.dim, spec.private_spread, derive_seed(seed, "private"),
                           spec.orthogonal_centers);
    pool = priv_gen.draw(spec.private_pool_per_class, derive_seed(seed, "private-noise"), "private");
    out.test_subclasses = priv_gen.draw(spec.test_per_class, derive_seed(seed, "test-noise"), "test");
  } else {
    pub_all = load_idx_dataset(spec.public_images, spec.public_labels, "public");
    pool = load_idx_dataset(spec.private_images, spec.private_labels, "private");
    out.test_subclasses = load_idx_dataset(spec.test_images, spec.test_labels, "test");
    if (pub_all.dim() != pool.dim() || pool.dim() != out.test_subclasses.dim()) {
      throw DataError("idx inputs disagree on sample size: public " + std::to_string(pub_all.dim()) +
                      ", private " + std::to_string(pool.dim()) + ", test " +
                      std::to_string(out.test_subclasses.dim()));
    }
  }

  Rng split_rng = derive_rng(seed, "public-split");
  auto [train, validation] = split(pub_all, spec.public_validation_fraction, split_rng);
  out.pub = PublicData{std::move(pub_all), std::move(train), std::move(validation)};

  PartitionPlan plan;
  plan.mode = spec.mode;
  plan.parties = config.collab.parties;
  plan.samples_per_class_per_party = spec.samples_per_class_per_party;
  plan.seed = derive_seed(seed, "partition");
  std::size_t private_classes = 0;
  if (spec.mode == PartitionMode::iid) {
    out.partition = partition_iid(pool, plan);
    out.test = out.test_subclasses;
    private_classes = std::max(label_count(pool), pool.num_classes);
  } else {
    out.subclass_to_superclass = superclass_map(spec);
    plan.subclass_to_superclass = out.subclass_to_superclass;
    out.partition = partition_noniid(pool, plan);
    out.test = relabel_to_superclass(out.test_subclasses, out.subclass_to_superclass, "test");
    private_classes = spec.superclasses;
  }
  out.num_outputs = std::max({out.pub.all.num_classes, label_count(out.pub.all), private_classes});
  return out;
}

Network make_network(const ExperimentConfig& config, std::size_t party, std::size_t input_dim,
                     std::size_t outputs) {
  if (party >= config.architectures.size()) {
    throw ConfigError("architectures: no entry for party " + std::to_string(party));
  }
  Rng rng = derive_rng(config.collab.seed, party, "init");
  const auto& hidden = config.architectures[party];
  std::string arch_id = "mlp";
  for (std::size_t w : hidden) arch_id += "-" + std::to_string(w);
  return Network::mlp(input_dim, hidden, outputs, rng, arch_id);
}

std::vector<PartySetup> make_parties(const ExperimentConfig& config, const ExperimentData& data) {
  std::vector<PartySetup> setups;
  for (std::size_t k = 0; k < config.collab.parties; ++k) {
    setups.push_back(PartySetup{make_network(config, k, data.pub.all.dim(), data.num_outputs),
                                data.partition.parties[k],
                                party_seed(config.collab.seed, static_cast<std::uint32_t>(k))});
  }
  return setups;
}

std::vector<double> pooled_from_transfer(const ExperimentConfig& config, const ExperimentData& data,
                                         const std::vector<BaselineResult>& baselines) {
  const Dataset pooled = concat(data.partition.parties, "pooled");
  std::vector<double> acc(baselines.size());
  for_each_party(baselines.size(), [&](std::size_t k) {
    const TransferResult& t = baselines[k].transfer;
    Network net = t.after_public;
    AdamState opt = t.opt_after_public;
    Rng rng = t.rng_after_public;
    train_until_converged(net, pooled, pooled, config.collab.transfer_stopping, config.collab.private_batch_size, opt,
                          rng);
    acc[k] = accuracy(net, data.test);
  });
  return acc;
}

namespace {

std::vector<BaselineResult> transfer_all(const ExperimentConfig& config, const ExperimentData& data) {
  std::vector<PartySetup> setups = make_parties(config, data);
  std::vector<BaselineResult> results(setups.size());
  for_each_party(setups.size(), [&](std::size_t k) {
    const auto start = std::chrono::steady_clock::now();
    PartyState state(static_cast<std::uint32_t>(k), std::move(setups[k].net), std::move(setups[k].private_data),
                     config.collab.optimizer, setups[k].seed);
    results[k].party = static_cast<std::uint32_t>(k);
    results[k].transfer = transfer_learn(state, data.pub, config.collab);
    results[k].accuracy = accuracy(state.net, data.test);
    results[k].wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  });
  return results;
}

}  // namespace

std::vector<double> baseline_pooled(const ExperimentConfig& config) {
  const ExperimentData data = build_data(config);
  return pooled_from_transfer(config, data, transfer_all(config, data));
}

std::vector<double> baseline_transfer(const ExperimentConfig& config) {
  const ExperimentData data = build_data(config);
  std::vector<double> acc;
  for (const BaselineResult& b : transfer_all(config, data)) acc.push_back(b.accuracy);
  return acc;
}

namespace {

nlohmann::json summary_json(const ExperimentResult& r, const ExperimentConfig& config) {
  const Summary& s = r.summary;
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : s.per_party_gap_to_pooled) gaps.push_back(optional_json(g));
  return {
      {"mean_gain", s.mean_gain},
      {"mean_baseline", s.mean_baseline},
      {"mean_final", s.mean_final},
      {"mean_gap_to_pooled", optional_json(s.mean_gap_to_pooled)},
      {"per_party_gain", s.per_party_gain},
      {"per_party_baseline", s.baseline},
      {"per_party_final", s.final_accuracy},
      {"per_party_gap_to_pooled", gaps},
      {"config_hash", r.log.config_hash},
      {"seed", r.log.seed},
      {"version", r.log.version},
      {"config", config_to_json(config)},
  };
}

void write_outputs(const ExperimentResult& r, const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "metrics.csv");
    if (!out) throw IoError("cannot write " + (dir / "metrics.csv").string());
    write_metrics_csv(r.log, out);
  }
  std::ofstream out(dir / "summary.json");
  if (!out) throw IoError("cannot write " + (dir / "summary.json").string());
  out << summary_json(r, config).dump(2) << '\n';
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const ExperimentData data = build_data(config);
  FedMdOptions options;
  options.transport = config.transport;
  options.tcp_address = config.address;
  FedMdResult fed = run_fedmd(config.collab, make_parties(config, data), data.pub, data.test, options);

  ExperimentResult result;
  MetricsLog& log = result.log;
  log.config_hash = config_hash(config);
  log.seed = config.collab.seed;
  log.version = version_string();
  for (const BaselineResult& b : fed.baselines) {
    log.rows.push_back(MetricsRow{RowKind::baseline, 0, b.party, b.accuracy, std::nullopt, std::nullopt, b.wall_ms});
  }
  for (const RoundMetrics& m : fed.rounds) {
    log.rows.push_back(
        MetricsRow{RowKind::round, m.round, m.party, m.accuracy, m.digest_loss, m.revisit_loss, m.wall_ms});
  }
  if (config.pooled) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<double> pooled = pooled_from_transfer(config, data, fed.baselines);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      log.rows.push_back(MetricsRow{RowKind::pooled, 0, static_cast<std::uint32_t>(k), pooled[k], std::nullopt,
                                    std::nullopt, ms / static_cast<double>(pooled.size())});
    }
  }
  log.sort();
  log.validate();
  result.summary = summarize(log);
  if (!config.output_dir.empty()) write_outputs(result, config);
  return result;
}

std::string version_string() { return "fedmd 0.1.0"; }

}  // namespace fedmd
