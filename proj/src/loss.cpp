// SPDX-License-Identifier: Apache-2.0
#include "fedmd/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedmd/error.hpp"

namespace fedmd {

namespace {

void softmax_row(std::span<const float> logits, std::vector<double>& probs) {
  probs.resize(logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(static_cast<double>(logits[c]) - top);
    total += probs[c];
  }
  for (double& p : probs) p /= total;
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  Tensor out = Tensor::zeros(logits.rows(), logits.cols());
  std::vector<double> probs;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    softmax_row(logits.row(r), probs);
    auto o = out.row(r);
    for (std::size_t c = 0; c < probs.size(); ++c) o[c] = static_cast<float>(probs[c]);
  }
  return out;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(batch) + " logit rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (batch == 0) {
    throw ShapeError("cross_entropy: empty batch");
  }
  LossResult result{0.0, Tensor::zeros(batch, classes)};
  std::vector<double> probs;
  double total = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw IndexError("label " + std::to_string(label) + " at row " + std::to_string(r) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    auto row = logits.row(r);
    const double top = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (float v : row) sum += std::exp(static_cast<double>(v) - top);
    // -log softmax = log(sum exp(z - top)) - (z_label - top)
    total += std::log(sum) - (static_cast<double>(row[label]) - top);
    softmax_row(row, probs);
    auto g = result.grad.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = static_cast<std::size_t>(label) == c ? 1.0 : 0.0;
      g[c] = static_cast<float>((probs[c] - onehot) * inv_batch);
    }
  }
  result.loss = total * inv_batch;
  return result;
}

LossResult distill_loss(const Tensor& logits, const Tensor& targets, DistillLoss kind) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("distill_loss: logits " + shape_string(logits.shape()) + " vs targets " +
                     shape_string(targets.shape()));
  }
  const std::size_t n = logits.size();
  if (n == 0) {
    throw ShapeError("distill_loss: empty batch");
  }
  LossResult result{0.0, Tensor::zeros(logits.rows(), logits.cols())};
  const auto l = logits.values();
  const auto t = targets.values();
  auto g = result.grad.values();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(l[i]) - static_cast<double>(t[i]);
    if (kind == DistillLoss::mae) {
      total += std::abs(diff);
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      g[i] = static_cast<float>(sign * inv_n);
    } else {
      total += diff * diff;
      g[i] = static_cast<float>(2.0 * diff * inv_n);
    }
  }
  result.loss = total * inv_n;
  return result;
}

}  // namespace fedmd
