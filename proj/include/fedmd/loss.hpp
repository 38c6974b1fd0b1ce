// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "fedmd/tensor.hpp"

namespace fedmd {

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, same shape as the logits
};

enum class DistillLoss { mae, mse };

/// Row-wise softmax with max subtraction, accumulated in float64.
Tensor softmax(const Tensor& logits);

/// Mean over the batch of -log softmax(logits)[label].
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean absolute (or squared) error over all B x C entries. The MAE
/// subgradient is sign(logits - targets) / (B*C), zero at exact ties.
LossResult distill_loss(const Tensor& logits, const Tensor& targets,
                        DistillLoss kind = DistillLoss::mae);

}  // namespace fedmd
