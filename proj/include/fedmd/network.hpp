// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedmd/rng.hpp"
#include "fedmd/tensor.hpp"

namespace fedmd {

enum class Activation { relu, identity };

/// One dense layer. Weights are stored in_dim x out_dim (row-major) so the
/// layer computes act(x W + b) on row vectors.
struct Layer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::identity;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Feed-forward classifier whose parameters live in one flat buffer. The
/// last layer has identity activation and emits raw logits.
class Network {
 public:
  struct LayerSpec {
    std::size_t in_dim;
    std::size_t out_dim;
    Activation activation;
  };

  /// Layerless placeholder (input and output dims 0).
  Network() = default;

  /// Zero-initialized network with the given layers. Throws ShapeError if
  /// adjacent dimensions do not compose or the last activation is not identity.
  Network(std::span<const LayerSpec> specs, std::string arch_id);

  /// ReLU MLP with fan-in scaled uniform weights, U(+-1/sqrt(fan_in)), drawn
  /// from `rng`, and zero biases.
  static Network mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t classes,
                     Rng& rng, std::string arch_id = {});

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const std::string& arch_id() const noexcept { return arch_id_; }

  std::span<float> params() noexcept { return params_; }
  std::span<const float> params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }

  std::span<float> weights(std::size_t layer);
  std::span<const float> weights(std::size_t layer) const;
  std::span<float> bias(std::size_t layer);
  std::span<const float> bias(std::size_t layer) const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::vector<Layer> layers_;
  std::vector<float> params_;
  std::string arch_id_;
};

/// Activations kept by a forward pass for backpropagation: inputs[i] is the
/// input of layer i, outputs[i] its post-activation output.
struct ForwardCache {
  std::vector<Tensor> inputs;
  std::vector<Tensor> outputs;
};

/// Raw logits, B x C. Each row is computed independently, so a row's logits
/// do not depend on which other rows share the batch.
Tensor forward(const Network& net, const Tensor& batch, ForwardCache* cache = nullptr);

/// Gradient of the loss w.r.t. every parameter, laid out like net.params().
std::vector<float> backward(const Network& net, const ForwardCache& cache, const Tensor& grad_logits);

/// argmax per row, ties to the lowest index.
std::vector<int> predict(const Network& net, const Tensor& batch);

}  // namespace fedmd
