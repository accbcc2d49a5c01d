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

#include <deque>
#include <functional>
#include <vector>

#include "resasr/rng.hpp"
#include "resasr/tensor.hpp"

namespace resasr {

enum class Mode { kTrain, kInfer };
enum class Padding { kSame, kValid };

constexpr float kBatchNormEps = 1e-5f;
constexpr float kBatchNormMomentum = 0.9f;

class Graph;
struct SoftmaxXentResult;

/// Handle to a node in a Graph. Cheap to copy; invalid when default-built.
class Var {
 public:
  Var() = default;
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  /// Gradient of the backward root w.r.t. this node, as a tensor copy.
  Tensor grad() const;

 private:
  friend class Graph;
  friend Var add(Var, Var);
  friend Var mul(Var, Var);
  friend Var matmul(Var, Var);
  friend Var conv2d(Var, Var, Var, int, Padding);
  friend Var relu(Var);
  friend Var maxpool2d(Var, int);
  friend Var flatten(Var);
  friend Var bias_add(Var, Var);
  friend Var batchnorm(Var, Var, Var, Tensor&, Tensor&, Mode);
  friend Var dropout(Var, float, Rng&, Mode);
  friend Var global_avg_pool(Var);
  friend Var sum(Var);
  friend SoftmaxXentResult softmax_xent(Var, const std::vector<int>&);
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

struct SoftmaxXentResult {
  Var loss;      // scalar node, shape [1]
  Tensor probs;  // row-stochastic N x K, detached from the graph
};

// Reverse-mode tape. Operations append nodes in topological order; backward
// walks them in reverse. Forward values are float32; every reduction
// (matmul, conv, batch statistics, loss) accumulates in float64 with a fixed
// summation order, so results are bitwise reproducible.
//
// A Graph is built for one forward/backward pass and then discarded.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// New leaf node holding a copy of `value`.
  Var leaf(Tensor value, bool needs_grad = false);

  /// Propagates gradients from a scalar root to every tracked leaf.
  /// May be called once per graph.
  void backward(Var root);

  const Tensor& value(Var v) const;
  Tensor grad(Var v) const;
  /// Gradient buffer without copying; valid after backward().
  const std::vector<float>& grad_ref(Var v) const;
  bool needs_grad(Var v) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor tensor;
    bool needs_grad = false;
    std::function<void()> backprop;  // empty for leaves
  };

  friend class Var;
  friend Var add(Var, Var);
  friend Var mul(Var, Var);
  friend Var matmul(Var, Var);
  friend Var conv2d(Var, Var, Var, int, Padding);
  friend Var relu(Var);
  friend Var maxpool2d(Var, int);
  friend Var flatten(Var);
  friend Var bias_add(Var, Var);
  friend Var batchnorm(Var, Var, Var, Tensor&, Tensor&, Mode);
  friend Var dropout(Var, float, Rng&, Mode);
  friend Var global_avg_pool(Var);
  friend Var sum(Var);
  friend SoftmaxXentResult softmax_xent(Var, const std::vector<int>&);

  Var emit(Tensor value, bool needs_grad, std::function<void()> backprop);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---- Operations ------------------------------------------------------------
// All ops validate shapes (ShapeError) and reject non-finite results
// (DivergenceError). Gradient conventions:
//   add        d/da = d/db = upstream
//   matmul     dA = dY.Bt, dB = At.dY
//   conv2d     gradients for input, kernels and bias
//   relu       subgradient 0 at 0
//   maxpool2d  gradient routed to the argmax cell, first index on ties
//   batchnorm  standard train-mode derivative; running stats are constants
//   dropout    the forward mask is reused exactly

/// Elementwise sum; shapes must match.
Var add(Var a, Var b);

/// Elementwise (Hadamard) product; shapes must match.
Var mul(Var a, Var b);

/// [m x k] . [k x n] -> [m x n].
Var matmul(Var a, Var b);

/// Cross-correlation (no kernel flip) of x: (N,C,H,W) or (C,H,W) with
/// kernels (C_out,C_in,kh,kw). `bias` (C_out) may be an invalid Var.
/// Same padding gives H' = ceil(H / stride).
Var conv2d(Var x, Var kernels, Var bias, int stride, Padding padding);

Var relu(Var x);

/// Non-overlapping pool x pool max pooling; floor division on odd extents.
Var maxpool2d(Var x, int pool);

/// Collapses all axes after the first; preserves element order.
Var flatten(Var x);

/// Adds a length-K bias row to every row of an (N,K) tensor.
Var bias_add(Var x, Var bias);

/// Per-channel batch normalization of (N,C,...) with channel axis 1.
/// Train mode uses batch statistics (batch extent >= 2) and updates
/// running_mean / running_var in place; infer mode reads them.
Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean,
              Tensor& running_var, Mode mode);

/// Inverted dropout: train mode zeroes with probability `rate` and scales
/// survivors by 1/(1-rate); infer mode is the identity. 0 <= rate < 1.
Var dropout(Var x, float rate, Rng& rng, Mode mode);

/// (N,C,H,W) -> (N,C) spatial mean.
Var global_avg_pool(Var x);

/// Scalar sum of all elements.
Var sum(Var x);

/// Row-stabilized softmax + mean negative log-likelihood over (N,K) logits.
/// Gradient of the loss w.r.t. logits is (probs - onehot) / N.
SoftmaxXentResult softmax_xent(Var logits, const std::vector<int>& labels);

inline const Tensor& Var::value() const { return graph_->value(*this); }
inline Tensor Var::grad() const { return graph_->grad(*this); }

}  // namespace resasr
