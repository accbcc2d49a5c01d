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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "resasr/common.hpp"
#include "resasr/rng.hpp"
#include "resasr/tensor.hpp"

using namespace resasr;

TEST_CASE("tensor shape and data sizes must agree") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5, 0.0f)), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, -1}), ShapeError);
}

TEST_CASE("tensor fill constructors") {
  Tensor z = Tensor::zeros({4});
  for (int i = 0; i < 4; ++i) CHECK(z[i] == 0.0f);
  Tensor f = Tensor::full({2, 2}, 1.5f);
  for (int i = 0; i < 4; ++i) CHECK(f[i] == 1.5f);
}

TEST_CASE("he_uniform stays inside its limit") {
  Rng rng(11);
  const int fan_in = 24;
  Tensor w = Tensor::he_uniform({6, 4}, fan_in, rng);
  const float limit = std::sqrt(6.0f / fan_in);
  for (int i = 0; i < w.numel(); ++i) {
    CHECK(w[i] >= -limit);
    CHECK(w[i] <= limit);
  }
}

TEST_CASE("multi-index access is row-major") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at({0, 0}) == 0.0f);
  CHECK(t.at({0, 2}) == 2.0f);
  CHECK(t.at({1, 0}) == 3.0f);
  CHECK(t.at({1, 2}) == 5.0f);
}

TEST_CASE("reshape preserves elements and validates count") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  for (int i = 0; i < 6; ++i) CHECK(r[i] == t[i]);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("all_finite catches NaN and infinity") {
  Tensor t({3}, {1.0f, 2.0f, 3.0f});
  CHECK(t.all_finite());
  t[1] = std::nanf("");
  CHECK_FALSE(t.all_finite());
  t[1] = INFINITY;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("grad buffer allocates lazily with matching size") {
  Tensor t({2, 2});
  CHECK_FALSE(t.has_grad());
  t.alloc_grad();
  CHECK(t.has_grad());
  CHECK(t.grad_values().size() == 4);
  for (float g : t.grad_values()) CHECK(g == 0.0f);
}

TEST_CASE("rng: identical seed gives identical draws") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: known splitmix64 values stay pinned across platforms") {
  // First outputs for seed 0; any change here breaks every stored corpus.
  Rng r(0);
  CHECK(r.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(r.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(r.next_u64() == 0x06c45d188009454fULL);
}

TEST_CASE("rng: split streams differ from the parent and each other") {
  Rng r(7);
  Rng s1 = r.split(1);
  Rng s2 = r.split(2);
  Rng r2(7);
  CHECK(s1.next_u64() != s2.next_u64());
  CHECK(r.next_u64() == r2.next_u64());  // split did not advance the parent
}

TEST_CASE("rng: uniform respects bounds, next_index respects range") {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const float v = r.uniform(-2.0f, 5.0f);
    CHECK(v >= -2.0f);
    CHECK(v < 5.0f + 1e-3f);
    const int64_t k = r.next_index(17);
    CHECK(k >= 0);
    CHECK(k < 17);
  }
}

TEST_CASE("rng: gaussian moments are sane") {
  Rng r(9);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("strfmt formats like printf") {
  CHECK(strfmt("%d/%s/%.2f", 3, "x", 1.5) == "3/x/1.50");
}
