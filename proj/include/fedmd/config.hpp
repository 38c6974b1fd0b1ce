// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmd/experiment.hpp"

namespace fedmd {

using Override = std::pair<std::string, std::string>;

/// "key=value" -> Override. Throws ConfigError when there is no '='.
Override parse_override(const std::string& text);

/// Builds a validated config from a JSON object. Unknown keys and violated
/// constraints raise ConfigError naming the key.
ExperimentConfig config_from_json(const nlohmann::json& doc, std::span<const Override> overrides = {});

ExperimentConfig parse_config(const std::string& path, std::span<const Override> overrides = {});

/// Every key with its effective value; config_from_json(config_to_json(c)) == c.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace fedmd
