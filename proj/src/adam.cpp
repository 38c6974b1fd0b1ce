// SPDX-License-Identifier: Apache-2.0
#include "fedmd/adam.hpp"

#include <cmath>
#include <string>

#include "fedmd/error.hpp"

namespace fedmd {

AdamState::AdamState(std::size_t parameter_count, AdamConfig cfg)
    : config(cfg), m(parameter_count, 0.0), v(parameter_count, 0.0) {}

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, state sized " + std::to_string(state.m.size()));
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] = static_cast<float>(static_cast<double>(params[i]) -
                                   c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
  }
}

}  // namespace fedmd
