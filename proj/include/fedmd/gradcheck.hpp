// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmd/loss.hpp"
#include "fedmd/network.hpp"
#include "fedmd/tensor.hpp"

namespace fedmd {

/// Relative error with an absolute floor: |a - n| / max(|a|, |n|, floor).
/// Below the floor the comparison degrades to an absolute one, which keeps
/// float32 round-off on near-zero gradients from dominating the check.
double gradient_relative_error(double analytic, double numeric, double floor = 1e-3);

/// Loss of a network evaluated entirely in float64 with an explicit
/// parameter vector. Independent of forward()/backward(); used as the
/// finite-difference oracle. `kinked` is set when a ReLU pre-activation or
/// an MAE residual sits exactly on a non-differentiable point.
struct Float64Loss {
  double value = 0.0;
  std::vector<bool> pattern;  // ReLU on/off and residual signs, in evaluation order
};

Float64Loss cross_entropy_f64(const Network& net, std::span<const double> params, const Tensor& inputs,
                              std::span<const int> labels);
Float64Loss distill_f64(const Network& net, std::span<const double> params, const Tensor& inputs,
                        const Tensor& targets, DistillLoss kind);

struct GradcheckResult {
  std::size_t networks = 0;
  std::size_t coordinates = 0;
  std::size_t skipped_kinks = 0;
  double max_error_cross_entropy = 0.0;
  double max_error_distill = 0.0;

  double max_error() const {
    return max_error_cross_entropy > max_error_distill ? max_error_cross_entropy : max_error_distill;
  }
};

/// Central differences (step h) against backprop on `networks` random small
/// nets (1-3 layers, widths <= 8) for cross-entropy and MAE distillation.
/// Coordinates whose +h/-h evaluations straddle a kink are skipped.
GradcheckResult run_gradcheck(std::size_t networks, std::uint64_t seed, double h = 1e-4);

}  // namespace fedmd
