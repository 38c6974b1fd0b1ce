// SPDX-License-Identifier: Apache-2.0
#include "fedmd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedmd/error.hpp"

namespace fedmd {

using nlohmann::json;

namespace {

constexpr double kWeightSumTolerance = 1e-9;

std::size_t get_count(const json& value, const std::string& key) {
  const bool ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (!ok) throw ConfigError(key + ": expected a non-negative integer, got " + value.dump());
  return value.get<std::size_t>();
}

double get_real(const json& value, const std::string& key) {
  if (!value.is_number()) throw ConfigError(key + ": expected a number, got " + value.dump());
  const double v = value.get<double>();
  if (!std::isfinite(v)) throw ConfigError(key + ": must be finite");
  return v;
}

bool get_bool(const json& value, const std::string& key) {
  if (!value.is_boolean()) throw ConfigError(key + ": expected true or false, got " + value.dump());
  return value.get<bool>();
}

std::string get_string(const json& value, const std::string& key) {
  if (!value.is_string()) throw ConfigError(key + ": expected a string, got " + value.dump());
  return value.get<std::string>();
}

template <typename E>
E get_enum(const json& value, const std::string& key, std::initializer_list<std::pair<const char*, E>> names) {
  const std::string s = get_string(value, key);
  std::string allowed;
  for (const auto& [name, e] : names) {
    if (s == name) return e;
    allowed += allowed.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(key + ": unknown value \"" + s + "\" (expected " + allowed + ")");
}

std::vector<double> get_reals(const json& value, const std::string& key) {
  if (!value.is_array()) throw ConfigError(key + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double v = get_real(value[i], key + "[" + std::to_string(i) + "]");
    if (v < 0.0) throw ConfigError(key + "[" + std::to_string(i) + "]: must be non-negative");
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<std::size_t>> get_architectures(const json& value) {
  if (!value.is_array()) throw ConfigError("architectures: expected an array of hidden-width arrays");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < value.size(); ++k) {
    const std::string key = "architectures[" + std::to_string(k) + "]";
    if (!value[k].is_array()) throw ConfigError(key + ": expected an array of layer widths");
    std::vector<std::size_t> widths;
    for (const json& w : value[k]) widths.push_back(get_count(w, key));
    out.push_back(std::move(widths));
  }
  return out;
}

struct Pending {
  std::optional<std::vector<double>> weights;
  std::optional<std::vector<double>> relative_weights;
};

using Setter = std::function<void(ExperimentConfig&, Pending&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto count = [&t](const char* key, auto member) {
      t[key] = [member](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
        member(c) = get_count(v, k);
      };
    };
    auto real = [&t](const char* key, auto member) {
      t[key] = [member](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
        member(c) = get_real(v, k);
      };
    };
    auto path = [&t](const char* key, auto member) {
      t[key] = [member](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
        member(c) = get_string(v, k);
      };
    };

    t["seed"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
      c.collab.seed = get_count(v, k);
    };
    count("parties", [](ExperimentConfig& c) -> auto& { return c.collab.parties; });
    count("rounds", [](ExperimentConfig& c) -> auto& { return c.collab.rounds; });
    count("subset_size", [](ExperimentConfig& c) -> auto& { return c.collab.subset_size; });
    t["weights"] = [](ExperimentConfig&, Pending& p, const json& v, const std::string& k) {
      p.weights = get_reals(v, k);
    };
    t["relative_weights"] = [](ExperimentConfig&, Pending& p, const json& v, const std::string& k) {
      p.relative_weights = get_reals(v, k);
    };
    count("digest_epochs", [](ExperimentConfig& c) -> auto& { return c.collab.digest_epochs; });
    count("digest_batch_size", [](ExperimentConfig& c) -> auto& { return c.collab.digest_batch_size; });
    count("revisit_epochs", [](ExperimentConfig& c) -> auto& { return c.collab.revisit_epochs; });
    count("revisit_batch_size", [](ExperimentConfig& c) -> auto& { return c.collab.revisit_batch_size; });
    t["distill_loss"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
      c.collab.distill_loss = get_enum<DistillLoss>(v, k, {{"mae", DistillLoss::mae}, {"mse", DistillLoss::mse}});
    };
    real("learning_rate", [](ExperimentConfig& c) -> auto& { return c.collab.optimizer.learning_rate; });
    real("beta1", [](ExperimentConfig& c) -> auto& { return c.collab.optimizer.beta1; });
    real("beta2", [](ExperimentConfig& c) -> auto& { return c.collab.optimizer.beta2; });
    real("epsilon", [](ExperimentConfig& c) -> auto& { return c.collab.optimizer.epsilon; });
    count("transfer_max_epochs", [](ExperimentConfig& c) -> auto& { return c.collab.transfer_stopping.max_epochs; });
    count("transfer_patience", [](ExperimentConfig& c) -> auto& { return c.collab.transfer_stopping.patience; });
    real("transfer_min_delta", [](ExperimentConfig& c) -> auto& { return c.collab.transfer_stopping.min_delta; });
    count("public_batch_size", [](ExperimentConfig& c) -> auto& { return c.collab.public_batch_size; });
    count("private_batch_size", [](ExperimentConfig& c) -> auto& { return c.collab.private_batch_size; });

    t["data_source"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
      c.data.source = get_enum<DataSource>(v, k, {{"blobs", DataSource::blobs}, {"idx", DataSource::idx}});
    };
    t["partition"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
      c.data.mode = get_enum<PartitionMode>(v, k, {{"iid", PartitionMode::iid}, {"noniid", PartitionMode::noniid}});
    };
    count("dim", [](ExperimentConfig& c) -> auto& { return c.data.dim; });
    count("public_classes", [](ExperimentConfig& c) -> auto& { return c.data.public_classes; });
    count("public_per_class", [](ExperimentConfig& c) -> auto& { return c.data.public_per_class; });
    real("public_spread", [](ExperimentConfig& c) -> auto& { return c.data.public_spread; });
    count("num_classes", [](ExperimentConfig& c) -> auto& { return c.data.num_classes; });
    real("private_spread", [](ExperimentConfig& c) -> auto& { return c.data.private_spread; });
    count("private_pool_per_class", [](ExperimentConfig& c) -> auto& { return c.data.private_pool_per_class; });
    count("test_per_class", [](ExperimentConfig& c) -> auto& { return c.data.test_per_class; });
    count("superclasses", [](ExperimentConfig& c) -> auto& { return c.data.superclasses; });
    count("subclasses_per_superclass",
          [](ExperimentConfig& c) -> auto& { return c.data.subclasses_per_superclass; });
    t["orthogonal_centers"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
      c.data.orthogonal_centers = get_bool(v, k);
    };
    count("samples_per_class_per_party",
          [](ExperimentConfig& c) -> auto& { return c.data.samples_per_class_per_party; });
    real("public_validation_fraction",
         [](ExperimentConfig& c) -> auto& { return c.data.public_validation_fraction; });
    path("public_images", [](ExperimentConfig& c) -> auto& { return c.data.public_images; });
    path("public_labels", [](ExperimentConfig& c) -> auto& { return c.data.public_labels; });
    path("private_images", [](ExperimentConfig& c) -> auto& { return c.data.private_images; });
    path("private_labels", [](ExperimentConfig& c) -> auto& { return c.data.private_labels; });
    path("test_images", [](ExperimentConfig& c) -> auto& { return c.data.test_images; });
    path("test_labels", [](ExperimentConfig& c) -> auto& { return c.data.test_labels; });

    t["architectures"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string&) {
      c.architectures = get_architectures(v);
    };
    t["pooled"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) { c.pooled = get_bool(v, k); };
    t["transport"] = [](ExperimentConfig& c, Pending&, const json& v, const std::string& k) {
      c.transport = get_enum<TransportKind>(v, k, {{"inproc", TransportKind::in_process}, {"tcp", TransportKind::tcp}});
    };
    path("address", [](ExperimentConfig& c) -> auto& { return c.address; });
    path("output_dir", [](ExperimentConfig& c) -> auto& { return c.output_dir; });
    return t;
  }();
  return table;
}

json override_value(const std::string& raw) {
  // Values are JSON when they parse as JSON, bare strings otherwise.
  json parsed = json::parse(raw, nullptr, false);
  if (parsed.is_discarded()) return json(raw);
  return parsed;
}

}  // namespace

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override \"" + text + "\": expected key=value");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

ExperimentConfig config_from_json(const json& doc, std::span<const Override> overrides) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object at top level");
  ExperimentConfig config;
  Pending pending;
  const auto& table = setters();
  auto apply = [&](const std::string& key, const json& value) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key + ": unknown configuration key");
    it->second(config, pending, value, key);
  };
  for (const auto& [key, value] : doc.items()) apply(key, value);
  for (const auto& [key, raw] : overrides) apply(key, override_value(raw));

  if (pending.weights && pending.relative_weights) {
    throw ConfigError("weights: give either weights or relative_weights, not both");
  }
  if (pending.weights && !pending.weights->empty()) {
    double sum = 0.0;
    for (double w : *pending.weights) sum += w;
    if (std::abs(sum - 1.0) > kWeightSumTolerance) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.12g", sum);
      throw ConfigError(std::string("weights: must sum to 1, got ") + buf +
                        " (use relative_weights for automatic normalization)");
    }
    config.collab.weights = *pending.weights;
  } else if (pending.relative_weights && !pending.relative_weights->empty()) {
    if (pending.relative_weights->size() != config.collab.parties) {
      throw ConfigError("relative_weights: " + std::to_string(pending.relative_weights->size()) + " entries for " +
                        std::to_string(config.collab.parties) + " parties");
    }
    config.collab.weights = normalize_weights(*pending.relative_weights);
  }

  if (config.architectures.empty()) {
    const auto& canon = canonical_architectures();
    for (std::size_t k = 0; k < config.collab.parties; ++k) config.architectures.push_back(canon[k % canon.size()]);
  }
  config.validate();
  return config;
}

ExperimentConfig parse_config(const std::string& path, std::span<const Override> overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  json doc;
  try {
    doc = json::parse(text.str());
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, path + ": invalid JSON: " + e.what());
  }
  return config_from_json(doc, overrides);
}

json config_to_json(const ExperimentConfig& c) {
  const CollaborationConfig& k = c.collab;
  const DataSpec& d = c.data;
  return {
      {"seed", k.seed},
      {"parties", k.parties},
      {"rounds", k.rounds},
      {"subset_size", k.subset_size},
      {"weights", k.weights},
      {"digest_epochs", k.digest_epochs},
      {"digest_batch_size", k.digest_batch_size},
      {"revisit_epochs", k.revisit_epochs},
      {"revisit_batch_size", k.revisit_batch_size},
      {"distill_loss", k.distill_loss == DistillLoss::mae ? "mae" : "mse"},
      {"learning_rate", k.optimizer.learning_rate},
      {"beta1", k.optimizer.beta1},
      {"beta2", k.optimizer.beta2},
      {"epsilon", k.optimizer.epsilon},
      {"transfer_max_epochs", k.transfer_stopping.max_epochs},
      {"transfer_patience", k.transfer_stopping.patience},
      {"transfer_min_delta", k.transfer_stopping.min_delta},
      {"public_batch_size", k.public_batch_size},
      {"private_batch_size", k.private_batch_size},
      {"data_source", d.source == DataSource::blobs ? "blobs" : "idx"},
      {"partition", d.mode == PartitionMode::iid ? "iid" : "noniid"},
      {"dim", d.dim},
      {"public_classes", d.public_classes},
      {"public_per_class", d.public_per_class},
      {"public_spread", d.public_spread},
      {"num_classes", d.num_classes},
      {"private_spread", d.private_spread},
      {"private_pool_per_class", d.private_pool_per_class},
      {"test_per_class", d.test_per_class},
      {"superclasses", d.superclasses},
      {"subclasses_per_superclass", d.subclasses_per_superclass},
      {"orthogonal_centers", d.orthogonal_centers},
      {"samples_per_class_per_party", d.samples_per_class_per_party},
      {"public_validation_fraction", d.public_validation_fraction},
      {"public_images", d.public_images},
      {"public_labels", d.public_labels},
      {"private_images", d.private_images},
      {"private_labels", d.private_labels},
      {"test_images", d.test_images},
      {"test_labels", d.test_labels},
      {"architectures", c.architectures},
      {"pooled", c.pooled},
      {"transport", c.transport == TransportKind::tcp ? "tcp" : "inproc"},
      {"address", c.address},
      {"output_dir", c.output_dir},
  };
}

std::string config_hash(const ExperimentConfig& config) {
  json canonical = config_to_json(config);
  // Where results are written and which transport carries them do not
  // change them.
  for (const char* key : {"output_dir", "transport", "address"}) canonical.erase(key);
  const std::string text = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedmd
