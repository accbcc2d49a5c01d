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

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "resasr/graph.hpp"
#include "resasr/rng.hpp"
#include "resasr/tensor.hpp"

namespace resasr {

enum class LayerKind {
  kConv,
  kMaxPool,
  kResidual,    // two 3x3 convs + 1x1 projection shortcut, relu after add
  kBottleneck,  // 1x1 / 3x3 / 1x1 convs, optional projection shortcut
  kFlatten,
  kDense,
  kDropout,
  kGlobalAvgPool,
};

struct LayerDesc {
  LayerKind kind{};
  std::string name;
  int filters = 0;  // conv / residual / bottleneck output channels
  int mid = 0;      // bottleneck middle channels
  int kernel = 0;
  int stride = 1;
  int pool = 0;
  int units = 0;    // dense
  float rate = 0.0f;  // dropout
  bool relu = false;
  bool batch_norm = false;
  bool projection = false;  // bottleneck: projection shortcut present
};

// Declarative architecture description. Layer shapes are validated when a
// spec is built; digest() identifies the architecture in checkpoints.
struct ModelSpec {
  std::string arch;  // "target" or "source"
  std::array<int, 3> input_shape{};  // channels, height, width
  int num_classes = 0;
  std::vector<LayerDesc> layers;

  std::string summary() const;
  std::string digest() const;
};

struct ParamEntry {
  Tensor tensor;
  bool trainable = true;  // false for running statistics and similar state
  bool frozen = false;    // frozen entries receive no optimizer update
};

// Named tensor map backing a model: weights, biases, batch-norm affine
// parameters and running statistics. Iteration order is the lexical name
// order, which keeps checkpoints and updates deterministic.
class ParamStore {
 public:
  void add(const std::string& name, Tensor tensor, bool trainable = true);
  bool contains(const std::string& name) const;
  Tensor& tensor(const std::string& name);
  const Tensor& tensor(const std::string& name) const;
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;

  size_t size() const { return entries_.size(); }
  std::vector<std::string> names() const;

  /// Sum of numel over trainable entries.
  int64_t total_parameters() const;

  /// Marks every entry whose name starts with one of the prefixes as frozen.
  /// Returns the number of entries frozen.
  int freeze_matching(const std::vector<std::string>& prefixes);
  void unfreeze_all();

  std::map<std::string, ParamEntry>::const_iterator begin() const {
    return entries_.begin();
  }
  std::map<std::string, ParamEntry>::const_iterator end() const {
    return entries_.end();
  }

 private:
  std::map<std::string, ParamEntry> entries_;
};

// Classifier over log-Mel maps: conv(64,k3)+pool, three residual blocks with
// 64/128/256 filters each followed by a pool, dense(128), dropout(0.5),
// softmax head. Input spatial extents must survive four halvings.
std::pair<ModelSpec, ParamStore> build_target(std::array<int, 3> input_shape,
                                              int num_classes, Rng& rng);

// ResNet-50 shape: 7x7/64 stem + pool, bottleneck stages of (3,4,6,3) blocks
// with filter triples (64,64,256) ... (512,512,2048), global average pool,
// dense head (1000 classes by default). Input spatial extents must be >= 32.
std::pair<ModelSpec, ParamStore> build_source(std::array<int, 3> input_shape,
                                              int num_classes = 1000);
std::pair<ModelSpec, ParamStore> build_source(std::array<int, 3> input_shape,
                                              int num_classes, Rng& rng);

struct ForwardResult {
  Var logits;
  // Leaf nodes created for parameters, in execution order. After backward,
  // their gradients feed the optimizer step.
  std::vector<std::pair<std::string, Var>> params;
};

using ParamVars = std::vector<std::pair<std::string, Var>>;

// Single-block forwards used by the executor, exposed so block-level
// invariants can be exercised in isolation. Parameter names are looked up
// under `name` (name.conv1, name.conv2, name.shortcut, ...).
Var residual_block_forward(Graph& graph, ParamStore& store,
                           const std::string& name, Var input, Mode mode,
                           ParamVars* params = nullptr);
Var bottleneck_block_forward(Graph& graph, ParamStore& store,
                             const std::string& name, int stride,
                             bool projection, Var input, Mode mode,
                             ParamVars* params = nullptr);

// Executes the spec over a (N,C,H,W) batch. Train mode uses batch statistics
// and dropout (dropout_rng required if any dropout layer is active); infer
// mode is deterministic and leaves running statistics untouched.
ForwardResult forward(const ModelSpec& spec, ParamStore& store, Graph& graph,
                      const Tensor& batch, Mode mode,
                      Rng* dropout_rng = nullptr);

struct LossResult {
  Var loss;
  Tensor probs;
  std::vector<std::pair<std::string, Var>> params;
};

/// forward() + softmax cross-entropy against the labels.
LossResult model_loss(const ModelSpec& spec, ParamStore& store, Graph& graph,
                      const Tensor& batch, const std::vector<int>& labels,
                      Mode mode, Rng* dropout_rng = nullptr);

}  // namespace resasr
