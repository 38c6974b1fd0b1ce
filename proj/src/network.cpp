// SPDX-License-Identifier: Apache-2.0
#include "fedmd/network.hpp"

#include <cmath>

#include "fedmd/error.hpp"

namespace fedmd {

Network::Network(std::span<const LayerSpec> specs, std::string arch_id) : arch_id_(std::move(arch_id)) {
  if (specs.empty()) {
    throw ShapeError("network needs at least one layer");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.in_dim == 0 || s.out_dim == 0) {
      throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
    }
    if (i > 0 && specs[i - 1].out_dim != s.in_dim) {
      throw ShapeError("layer " + std::to_string(i - 1) + " outputs " + std::to_string(specs[i - 1].out_dim) +
                       " but layer " + std::to_string(i) + " expects " + std::to_string(s.in_dim));
    }
    Layer layer{s.in_dim, s.out_dim, s.activation, offset, offset + s.in_dim * s.out_dim};
    offset = layer.bias_offset + s.out_dim;
    layers_.push_back(layer);
  }
  if (layers_.back().activation != Activation::identity) {
    throw ShapeError("final layer must emit raw logits (identity activation)");
  }
  params_.assign(offset, 0.0f);
}

Network Network::mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t classes, Rng& rng,
                     std::string arch_id) {
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (std::size_t width : hidden) {
    specs.push_back({in, width, Activation::relu});
    in = width;
  }
  specs.push_back({in, classes, Activation::identity});
  if (arch_id.empty()) {
    arch_id = "mlp";
    for (std::size_t width : hidden) arch_id += "-" + std::to_string(width);
  }
  Network net(specs, std::move(arch_id));
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    // Kaiming-uniform with negative slope sqrt(5): bound 1/sqrt(fan_in).
    const double limit = 1.0 / std::sqrt(static_cast<double>(net.layers_[l].in_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (float& w : net.weights(l)) w = static_cast<float>(dist(rng));
  }
  return net;
}

std::span<float> Network::weights(std::size_t layer) {
  const auto& l = layers_.at(layer);
  return std::span<float>(params_).subspan(l.weight_offset, l.in_dim * l.out_dim);
}

std::span<const float> Network::weights(std::size_t layer) const {
  const auto& l = layers_.at(layer);
  return std::span<const float>(params_).subspan(l.weight_offset, l.in_dim * l.out_dim);
}

std::span<float> Network::bias(std::size_t layer) {
  const auto& l = layers_.at(layer);
  return std::span<float>(params_).subspan(l.bias_offset, l.out_dim);
}

std::span<const float> Network::bias(std::size_t layer) const {
  const auto& l = layers_.at(layer);
  return std::span<const float>(params_).subspan(l.bias_offset, l.out_dim);
}

namespace {

// y = x W + b for every row; the k-loop order is fixed so each output element
// is summed identically whatever the batch composition.
Tensor affine(const Tensor& x, std::span<const float> w, std::span<const float> b, std::size_t in,
              std::size_t out) {
  const std::size_t rows = x.rows();
  Tensor y = Tensor::zeros(rows, out);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.row(r);
    auto yr = y.row(r);
    for (std::size_t j = 0; j < out; ++j) yr[j] = b[j];
    for (std::size_t k = 0; k < in; ++k) {
      const float xk = xr[k];
      const float* wk = w.data() + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xk * wk[j];
    }
  }
  return y;
}

}  // namespace

Tensor forward(const Network& net, const Tensor& batch, ForwardCache* cache) {
  if (batch.cols() != net.input_dim()) {
    throw ShapeError("input has " + std::to_string(batch.cols()) + " features but network expects " +
                     std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Tensor x = batch.rank() == 2 ? batch : batch.flattened();
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    Tensor y = affine(x, net.weights(l), net.bias(l), layer.in_dim, layer.out_dim);
    if (layer.activation == Activation::relu) {
      // Written so that NaN passes through and divergence stays visible.
      for (float& v : y.values()) v = v < 0.0f ? 0.0f : v;
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->outputs.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

std::vector<float> backward(const Network& net, const ForwardCache& cache, const Tensor& grad_logits) {
  const auto& layers = net.layers();
  if (cache.inputs.size() != layers.size()) {
    throw ShapeError("forward cache does not match network depth");
  }
  if (grad_logits.rows() != cache.outputs.back().rows() || grad_logits.cols() != net.output_dim()) {
    throw ShapeError("logit gradient shape " + shape_string(grad_logits.shape()) + " does not match " +
                     shape_string(cache.outputs.back().shape()));
  }
  std::vector<float> grads(net.param_count(), 0.0f);
  Tensor delta = grad_logits;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const Tensor& x = cache.inputs[l];
    if (layer.activation == Activation::relu) {
      const auto out = cache.outputs[l].values();
      auto d = delta.values();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (out[i] <= 0.0f) d[i] = 0.0f;
      }
    }
    float* gw = grads.data() + layer.weight_offset;
    float* gb = grads.data() + layer.bias_offset;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto xr = x.row(r);
      auto dr = delta.row(r);
      for (std::size_t j = 0; j < layer.out_dim; ++j) gb[j] += dr[j];
      for (std::size_t k = 0; k < layer.in_dim; ++k) {
        const float xk = xr[k];
        float* gwk = gw + k * layer.out_dim;
        for (std::size_t j = 0; j < layer.out_dim; ++j) gwk[j] += xk * dr[j];
      }
    }
    if (l == 0) break;
    const auto w = net.weights(l);
    Tensor prev = Tensor::zeros(x.rows(), layer.in_dim);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto dr = delta.row(r);
      auto pr = prev.row(r);
      for (std::size_t k = 0; k < layer.in_dim; ++k) {
        const float* wk = w.data() + k * layer.out_dim;
        float acc = 0.0f;
        for (std::size_t j = 0; j < layer.out_dim; ++j) acc += wk[j] * dr[j];
        pr[k] = acc;
      }
    }
    delta = std::move(prev);
  }
  return grads;
}

std::vector<int> predict(const Network& net, const Tensor& batch) {
  const Tensor logits = forward(net, batch);
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace fedmd
