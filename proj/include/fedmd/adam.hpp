// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedmd {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Moments are kept in float64; parameters stay float32.
struct AdamState {
  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamConfig config);

  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Increments state.step exactly once.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state);

}  // namespace fedmd
