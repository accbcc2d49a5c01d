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

#include <functional>

#include "resasr/graph.hpp"
#include "resasr/tensor.hpp"

namespace resasr {

struct GradCheckReport {
  double max_rel_err = 0.0;  // ||numeric - analytic|| / max(norms, floor)
  bool pass = false;
  int64_t checked = 0;  // elements probed
};

// Central-difference oracle against a supplied analytic gradient. The scalar
// function f is evaluated in float64; probes perturb one float32 element at a
// time and divide by the actually representable difference, so linear maps
// with exactly representable values check out exactly. The reported error is
// the agreement ratio ||numeric - analytic|| / max(||analytic||, ||numeric||)
// over the probed elements, which keeps float32 forward noise on individual
// entries from swamping the comparison.
//
// max_elements > 0 probes a seeded random subset instead of every element.
// scale_floor, when positive, bounds the normalization from below; pass the
// whole-model gradient scale when checking tensors whose own gradient is
// legitimately near zero (a conv bias feeding batch norm).
GradCheckReport grad_check_fd(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, const Tensor& analytic,
                              double tol, double step = 1e-3,
                              int64_t max_elements = 0,
                              uint64_t select_seed = 1,
                              double scale_floor = 0.0);

// Checks an op's implemented backward: differentiates a fixed weighted sum
// of op(x) through the graph and compares with finite differences. `op` must
// be pure so each probe can rebuild the graph; ops drawing randomness must
// reseed inside the callback.
GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& op,
                           const Tensor& x, double tol, double step = 1e-3,
                           int64_t max_elements = 0, uint64_t select_seed = 1,
                           double scale_floor = 0.0);

// Largest analytic-gradient magnitude across all inputs of one op under the
// same scalarization grad_check uses. Serves as the scale_floor when a
// single input's gradient can legitimately cancel to ~0 (a batch-norm gamma,
// a conv bias feeding batch norm).
double grad_scale(const std::function<Var(Graph&, std::vector<Var>&)>& op,
                  const std::vector<Tensor>& inputs);

}  // namespace resasr
