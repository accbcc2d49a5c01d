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

#include "resasr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "resasr/common.hpp"
#include "resasr/rng.hpp"

namespace resasr {

namespace {

std::vector<int64_t> probe_indices(int64_t numel, int64_t max_elements,
                                   uint64_t seed) {
  if (max_elements <= 0 || max_elements >= numel) {
    std::vector<int64_t> all(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) all[static_cast<size_t>(i)] = i;
    return all;
  }
  // Partial Fisher-Yates over the index range.
  std::vector<int64_t> pool(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i) pool[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  std::vector<int64_t> picks;
  picks.reserve(static_cast<size_t>(max_elements));
  for (int64_t i = 0; i < max_elements; ++i) {
    const int64_t j = i + rng.next_index(numel - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    picks.push_back(pool[static_cast<size_t>(i)]);
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

}  // namespace

GradCheckReport grad_check_fd(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, const Tensor& analytic,
                              double tol, double step, int64_t max_elements,
                              uint64_t select_seed, double scale_floor) {
  if (!x.same_shape(analytic)) {
    throw ShapeError("grad_check: analytic gradient shape differs from input");
  }
  if (!x.all_finite()) throw Error("grad_check: non-finite input");
  const double f0 = f(x);
  if (!std::isfinite(f0)) throw Error("grad_check: non-finite forward value");

  Tensor probe = x;
  const auto indices = probe_indices(x.numel(), max_elements, select_seed);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (int64_t i : indices) {
    const float orig = probe[i];
    const float xp = static_cast<float>(static_cast<double>(orig) + step);
    const float xm = static_cast<float>(static_cast<double>(orig) - step);
    probe[i] = xp;
    const double fp = f(probe);
    probe[i] = xm;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("grad_check: non-finite forward value at a probe");
    }
    const double denom = static_cast<double>(xp) - static_cast<double>(xm);
    const double numeric = (fp - fm) / denom;
    const double a = static_cast<double>(analytic[i]);
    diff2 += (numeric - a) * (numeric - a);
    a2 += a * a;
    n2 += numeric * numeric;
  }

  GradCheckReport report;
  report.checked = static_cast<int64_t>(indices.size());
  const double scale =
      std::max({std::sqrt(a2), std::sqrt(n2), scale_floor, 1e-12});
  report.max_rel_err = std::sqrt(diff2) / scale;
  report.pass = report.max_rel_err < tol;
  return report;
}

namespace {

// Fixed projection weights for scalarizing multi-output ops. A plain sum is
// blind to ops whose outputs sum to a constant (batch normalization: the
// normalized values of each channel always add to zero), so every output is
// weighted by a fixed nonzero coefficient instead.
Tensor projection_weights(const std::vector<int>& shape) {
  Rng rng(0xC0FFEE);
  Tensor w(shape);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.5f, 1.5f);
  return w;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& op,
                           const Tensor& x, double tol, double step,
                           int64_t max_elements, uint64_t select_seed,
                           double scale_floor) {
  // Analytic gradient through the graph, with the same weighted projection
  // the probes use.
  Tensor analytic;
  {
    Graph g;
    Var xv = g.leaf(x, true);
    Var y = op(g, xv);
    Var root = y.value().numel() == 1
                   ? y
                   : sum(mul(y, g.leaf(projection_weights(y.value().shape()))));
    g.backward(root);
    analytic = g.grad(xv);
  }
  auto f = [&op](const Tensor& probe) {
    Graph g;
    Var xv = g.leaf(probe, false);
    Var y = op(g, xv);
    const Tensor& out = y.value();
    if (out.numel() == 1) return static_cast<double>(out[0]);
    const Tensor w = projection_weights(out.shape());
    double s = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) {
      s += static_cast<double>(out[i]) * static_cast<double>(w[i]);
    }
    return s;
  };
  return grad_check_fd(f, x, analytic, tol, step, max_elements, select_seed,
                       scale_floor);
}

double grad_scale(const std::function<Var(Graph&, std::vector<Var>&)>& op,
                  const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
  Var y = op(g, vars);
  Var root = y.value().numel() == 1
                 ? y
                 : sum(mul(y, g.leaf(projection_weights(y.value().shape()))));
  g.backward(root);
  double scale = 0.0;
  for (const Var& v : vars) {
    for (float gv : g.grad_ref(v)) {
      scale = std::max(scale, static_cast<double>(std::fabs(gv)));
    }
  }
  return scale;
}

}  // namespace resasr
