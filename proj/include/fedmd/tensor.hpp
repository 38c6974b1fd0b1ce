// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedmd {

/// Dense row-major float32 array. Shape dimensions are positive except that
/// a 2-D tensor may have zero rows (an empty batch).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values);
  static Tensor zeros(std::size_t rows, std::size_t cols);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }

  // 2-D accessors; rows() is the leading dimension and cols() the product of
  // the remaining ones, so an image stack [N, h, w] reads as N x (h*w).
  std::size_t rows() const;
  std::size_t cols() const;

  float& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  /// Same values viewed as rows() x cols().
  Tensor flattened() const;

  /// Rows gathered in the given order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> values_;
};

std::string shape_string(std::span<const std::size_t> shape);

}  // namespace fedmd
