// SPDX-License-Identifier: Apache-2.0
// Test-only helpers: reference implementations in float64 and an IDX writer.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fedmd/messages.hpp"
#include "fedmd/network.hpp"
#include "fedmd/tensor.hpp"

namespace fedmd::test {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<float> v(rows * cols);
  for (float& x : v) x = static_cast<float>(u(rng));
  return Tensor::matrix(rows, cols, std::move(v));
}

/// Row-by-row forward pass in float64, straight from the layer table.
inline std::vector<std::vector<double>> naive_forward(const Network& net, const Tensor& x) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> a(x.row(r).begin(), x.row(r).end());
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      const Layer& layer = net.layers()[l];
      auto w = net.weights(l);
      auto b = net.bias(l);
      std::vector<double> z(layer.out_dim);
      for (std::size_t j = 0; j < layer.out_dim; ++j) {
        double s = b[j];
        for (std::size_t i = 0; i < layer.in_dim; ++i) s += a[i] * w[i * layer.out_dim + j];
        z[j] = layer.activation == Activation::relu ? std::max(0.0, s) : s;
      }
      a = std::move(z);
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Mean negative log-likelihood via log-sum-exp, float64.
inline double naive_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double hi = -INFINITY;
    for (float v : logits.row(r)) hi = std::max(hi, static_cast<double>(v));
    double s = 0.0;
    for (float v : logits.row(r)) s += std::exp(static_cast<double>(v) - hi);
    total += hi + std::log(s) - static_cast<double>(logits.at(r, static_cast<std::size_t>(labels[r])));
  }
  return total / static_cast<double>(logits.rows());
}

/// Textbook Adam on a float64 parameter vector.
struct OracleAdam {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

/// Random well-formed message of any kind, including empty matrices and
/// extreme float magnitudes.
inline Message random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_int_distribution<std::uint32_t> u32;
  std::uniform_int_distribution<std::size_t> rows(0, 12), cols(1, 12);
  auto matrix = [&] {
    const std::size_t r = rows(rng), c = cols(rng);
    std::uniform_int_distribution<int> pick(0, 9);
    std::uniform_real_distribution<float> u(-100.0f, 100.0f);
    std::vector<float> v(r * c);
    for (float& x : v) {
      switch (pick(rng)) {
        case 0: x = 3.4e38f; break;
        case 1: x = -1.2e-38f; break;
        case 2: x = -0.0f; break;
        default: x = u(rng);
      }
    }
    return Tensor::matrix(r, c, std::move(v));
  };
  switch (kind(rng)) {
    case 0: return ScoreMatrix{u32(rng), u32(rng), matrix()};
    case 1: return ConsensusTargets{u32(rng), matrix()};
    case 2: {
      SubsetSelection s{u32(rng), {}};
      s.indices.resize(rows(rng) * 3);
      for (auto& i : s.indices) i = u32(rng);
      return s;
    }
    default: return RoundComplete{u32(rng)};
  }
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

/// Unsigned-byte IDX stream with the given dims.
inline std::vector<std::uint8_t> idx_bytes(const std::vector<std::uint32_t>& dims,
                                           const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(dims.size())};
  for (auto d : dims) put_be32(out, d);
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedmd-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fedmd::test
