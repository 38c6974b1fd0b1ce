// SPDX-License-Identifier: Apache-2.0
#include "fedmd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedmd/error.hpp"
#include "fedmd/rng.hpp"

namespace fedmd {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

// Plain float64 re-evaluation of the network; shares only the parameter
// layout with forward().
std::vector<std::vector<double>> logits_f64(const Network& net, std::span<const double> params, const Tensor& inputs,
                                            std::vector<bool>& pattern) {
  if (params.size() != net.param_count()) {
    throw ShapeError("float64 evaluator: parameter count mismatch");
  }
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    auto row = inputs.row(r);
    std::vector<double> a(row.begin(), row.end());
    for (const Layer& layer : net.layers()) {
      std::vector<double> z(layer.out_dim);
      for (std::size_t j = 0; j < layer.out_dim; ++j) {
        double s = params[layer.bias_offset + j];
        for (std::size_t k = 0; k < layer.in_dim; ++k) s += a[k] * params[layer.weight_offset + k * layer.out_dim + j];
        if (layer.activation == Activation::relu) {
          pattern.push_back(s > 0.0);
          s = s > 0.0 ? s : 0.0;
        }
        z[j] = s;
      }
      a = std::move(z);
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

Float64Loss cross_entropy_f64(const Network& net, std::span<const double> params, const Tensor& inputs,
                              std::span<const int> labels) {
  Float64Loss result;
  const auto logits = logits_f64(net, params, inputs, result.pattern);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    const auto& z = logits[r];
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - top);
    total += top + std::log(sum) - z[static_cast<std::size_t>(labels[r])];
  }
  result.value = total / static_cast<double>(logits.size());
  return result;
}

Float64Loss distill_f64(const Network& net, std::span<const double> params, const Tensor& inputs,
                        const Tensor& targets, DistillLoss kind) {
  Float64Loss result;
  const auto logits = logits_f64(net, params, inputs, result.pattern);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    for (std::size_t c = 0; c < logits[r].size(); ++c) {
      const double d = logits[r][c] - static_cast<double>(targets.at(r, c));
      if (kind == DistillLoss::mae) {
        result.pattern.push_back(d > 0.0);
        total += std::abs(d);
      } else {
        total += d * d;
      }
      ++count;
    }
  }
  result.value = total / static_cast<double>(count);
  return result;
}

GradcheckResult run_gradcheck(std::size_t networks, std::uint64_t seed, double h) {
  GradcheckResult result;
  Rng rng = derive_rng(seed, "gradcheck");
  std::uniform_int_distribution<std::size_t> width(1, 8);
  std::uniform_int_distribution<std::size_t> classes_dist(2, 8);
  std::uniform_int_distribution<std::size_t> depth_dist(1, 3);
  std::uniform_int_distribution<std::size_t> batch_dist(1, 4);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t n = 0; n < networks; ++n) {
    const std::size_t input_dim = width(rng);
    const std::size_t classes = classes_dist(rng);
    const std::size_t depth = depth_dist(rng);
    std::vector<std::size_t> hidden;
    for (std::size_t l = 1; l < depth; ++l) hidden.push_back(width(rng));
    Network net = Network::mlp(input_dim, hidden, classes, rng);
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      for (float& b : net.bias(l)) b = static_cast<float>(0.1 * normal(rng));
    }
    const std::size_t batch = batch_dist(rng);
    Tensor inputs = Tensor::zeros(batch, input_dim);
    for (float& v : inputs.values()) v = static_cast<float>(normal(rng));
    Tensor targets = Tensor::zeros(batch, classes);
    for (float& v : targets.values()) v = static_cast<float>(normal(rng));
    std::vector<int> labels(batch);
    for (int& y : labels) y = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng));

    ForwardCache cache;
    const Tensor logits = forward(net, inputs, &cache);
    const std::vector<float> grad_ce = backward(net, cache, cross_entropy(logits, labels).grad);
    const std::vector<float> grad_kd = backward(net, cache, distill_loss(logits, targets, DistillLoss::mae).grad);

    const auto p = net.params();
    std::vector<double> params(p.begin(), p.end());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double original = params[i];
      params[i] = original + h;
      const Float64Loss ce_plus = cross_entropy_f64(net, params, inputs, labels);
      const Float64Loss kd_plus = distill_f64(net, params, inputs, targets, DistillLoss::mae);
      params[i] = original - h;
      const Float64Loss ce_minus = cross_entropy_f64(net, params, inputs, labels);
      const Float64Loss kd_minus = distill_f64(net, params, inputs, targets, DistillLoss::mae);
      params[i] = original;

      if (ce_plus.pattern != ce_minus.pattern || kd_plus.pattern != kd_minus.pattern) {
        ++result.skipped_kinks;
        continue;
      }
      const double num_ce = (ce_plus.value - ce_minus.value) / (2.0 * h);
      const double num_kd = (kd_plus.value - kd_minus.value) / (2.0 * h);
      result.max_error_cross_entropy =
          std::max(result.max_error_cross_entropy, gradient_relative_error(grad_ce[i], num_ce));
      result.max_error_distill = std::max(result.max_error_distill, gradient_relative_error(grad_kd[i], num_kd));
      ++result.coordinates;
    }
    ++result.networks;
  }
  return result;
}

}  // namespace fedmd
