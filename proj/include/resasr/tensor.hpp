// Copyright 2026 The resasr authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resasr/rng.hpp"

namespace resasr {

// Dense rank-N float32 array, row-major, with an optional gradient buffer of
// the same shape. Plain value semantics: copying a Tensor copies its data
// and gradient.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<int> shape);

  /// Tensor wrapping existing data; data.size() must equal product(shape).
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float value);

  /// He-uniform fill: U(-limit, limit) with limit = sqrt(6 / fan_in).
  static Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Multi-index access (rank must match the number of indices).
  float& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  float at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  // Gradient buffer. Allocated on demand; zero-filled on allocation.
  bool has_grad() const { return !grad_.empty(); }
  void alloc_grad();
  void drop_grad() { grad_.clear(); }
  float* grad() { return grad_.data(); }
  const float* grad() const { return grad_.data(); }
  std::vector<float>& grad_values() { return grad_; }
  const std::vector<float>& grad_values() const { return grad_; }

  /// True iff every value is finite (gradient not inspected).
  bool all_finite() const;

  /// Reinterprets the data under a new shape with the same element count.
  Tensor reshaped(std::vector<int> new_shape) const;

 private:
  size_t offset(std::initializer_list<int> idx) const;

  std::vector<int> shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
};

/// Product of extents; throws ShapeError on non-positive extents.
int64_t shape_numel(const std::vector<int>& shape);

}  // namespace resasr
