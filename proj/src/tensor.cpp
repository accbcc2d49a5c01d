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

#include "resasr/tensor.hpp"

#include <cmath>

#include "resasr/common.hpp"

namespace resasr {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError(strfmt("non-positive extent %d", e));
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      data_(static_cast<size_t>(shape_numel(shape_)), 0.0f) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError(strfmt("shape %s does not match %zu values",
                            shape_str().c_str(), data_.size()));
  }
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

Tensor Tensor::he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ShapeError("he_uniform: fan_in must be positive");
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = rng.uniform(-limit, limit);
  return t;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

void Tensor::alloc_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0f);
}

bool Tensor::all_finite() const {
  // (v - v) is +-0 for finite v and NaN for inf/NaN, so the sum is NaN iff
  // any element is non-finite. Vectorizes, unlike a per-element isfinite.
  float acc = 0.0f;
  for (float v : data_) acc += v - v;
  return !std::isnan(acc);
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError(strfmt("cannot reshape %s to hold %lld values",
                            shape_str().c_str(),
                            static_cast<long long>(numel())));
  }
  return Tensor(std::move(new_shape), data_);
}

size_t Tensor::offset(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw ShapeError(strfmt("index rank %zu vs tensor rank %d", idx.size(),
                            rank()));
  }
  size_t off = 0;
  int axis = 0;
  for (int i : idx) {
    off = off * static_cast<size_t>(shape_[static_cast<size_t>(axis)]) +
          static_cast<size_t>(i);
    ++axis;
  }
  return off;
}

}  // namespace resasr
