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

#include "resasr/model.hpp"

#include <algorithm>

#include "resasr/common.hpp"

namespace resasr {

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

struct ShapeState {
  // Either a (C,H,W) map or a flat width after flatten / global pooling.
  int c = 0, h = 0, w = 0;
  int flat = 0;
  bool is_flat = false;
};

ShapeState simulate_layer(const LayerDesc& l, ShapeState s) {
  auto need_map = [&](const char* what) {
    if (s.is_flat) {
      throw ShapeError(strfmt("%s '%s' needs a spatial input", what,
                              l.name.c_str()));
    }
  };
  switch (l.kind) {
    case LayerKind::kConv:
      need_map("conv");
      s.c = l.filters;
      s.h = (s.h + l.stride - 1) / l.stride;
      s.w = (s.w + l.stride - 1) / l.stride;
      break;
    case LayerKind::kMaxPool: {
      need_map("maxpool");
      const int oh = s.h / l.pool, ow = s.w / l.pool;
      if (oh < 1 || ow < 1) {
        throw ShapeError(strfmt(
            "input too small: pooling layer '%s' collapses a %dx%d map",
            l.name.c_str(), s.h, s.w));
      }
      s.h = oh;
      s.w = ow;
      break;
    }
    case LayerKind::kResidual:
      need_map("residual block");
      s.c = l.filters;
      break;
    case LayerKind::kBottleneck:
      need_map("bottleneck block");
      s.c = l.filters;
      s.h = (s.h + l.stride - 1) / l.stride;
      s.w = (s.w + l.stride - 1) / l.stride;
      break;
    case LayerKind::kFlatten:
      need_map("flatten");
      s.flat = s.c * s.h * s.w;
      s.is_flat = true;
      break;
    case LayerKind::kGlobalAvgPool:
      need_map("global_avg_pool");
      s.flat = s.c;
      s.is_flat = true;
      break;
    case LayerKind::kDense:
      if (!s.is_flat) {
        throw ShapeError(strfmt("dense layer '%s' needs a flat input",
                                l.name.c_str()));
      }
      s.flat = l.units;
      break;
    case LayerKind::kDropout:
      break;
  }
  return s;
}

/// Walks the spec once; throws ShapeError if layers do not compose.
void validate_spec(const ModelSpec& spec) {
  ShapeState s;
  s.c = spec.input_shape[0];
  s.h = spec.input_shape[1];
  s.w = spec.input_shape[2];
  for (const auto& l : spec.layers) s = simulate_layer(l, s);
  if (!s.is_flat) throw ShapeError("spec does not end in a flat head");
  if (s.flat != spec.num_classes) {
    throw ShapeError(strfmt("head width %d vs %d classes", s.flat,
                            spec.num_classes));
  }
}

void add_conv_params(ParamStore& store, Rng& rng, const std::string& name,
                     int cout, int cin, int kh, int kw, bool with_bn) {
  store.add(name + ".weight",
            Tensor::he_uniform({cout, cin, kh, kw}, cin * kh * kw, rng));
  store.add(name + ".bias", Tensor::zeros({cout}));
  if (with_bn) {
    store.add(name + ".gamma", Tensor::full({cout}, 1.0f));
    store.add(name + ".beta", Tensor::zeros({cout}));
    store.add(name + ".running_mean", Tensor::zeros({cout}), false);
    store.add(name + ".running_var", Tensor::full({cout}, 1.0f), false);
  }
}

void add_dense_params(ParamStore& store, Rng& rng, const std::string& name,
                      int in_width, int units) {
  store.add(name + ".weight",
            Tensor::he_uniform({in_width, units}, in_width, rng));
  store.add(name + ".bias", Tensor::zeros({units}));
}

// The classifier head starts at zero so a fresh model predicts the uniform
// distribution (initial loss ln K) instead of the inflated loss a He-scaled
// head produces after the dropout layer.
void add_zero_dense_params(ParamStore& store, const std::string& name,
                           int in_width, int units) {
  store.add(name + ".weight", Tensor::zeros({in_width, units}));
  store.add(name + ".bias", Tensor::zeros({units}));
}

const char* kind_tag(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kMaxPool: return "pool";
    case LayerKind::kResidual: return "res";
    case LayerKind::kBottleneck: return "bneck";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kGlobalAvgPool: return "gap";
  }
  return "?";
}

}  // namespace

// ---- ParamStore ------------------------------------------------------------

void ParamStore::add(const std::string& name, Tensor tensor, bool trainable) {
  auto [it, inserted] = entries_.emplace(name, ParamEntry{std::move(tensor),
                                                          trainable, false});
  if (!inserted) throw Error(strfmt("duplicate parameter '%s'", name.c_str()));
  (void)it;
}

bool ParamStore::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

Tensor& ParamStore::tensor(const std::string& name) {
  return entry(name).tensor;
}

const Tensor& ParamStore::tensor(const std::string& name) const {
  return entry(name).tensor;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error(strfmt("unknown parameter '%s'", name.c_str()));
  }
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error(strfmt("unknown parameter '%s'", name.c_str()));
  }
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

int64_t ParamStore::total_parameters() const {
  int64_t n = 0;
  for (const auto& [name, entry] : entries_) {
    if (entry.trainable) n += entry.tensor.numel();
  }
  return n;
}

int ParamStore::freeze_matching(const std::vector<std::string>& prefixes) {
  int count = 0;
  for (auto& [name, entry] : entries_) {
    for (const auto& p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        if (!entry.frozen) {
          entry.frozen = true;
          ++count;
        }
        break;
      }
    }
  }
  return count;
}

void ParamStore::unfreeze_all() {
  for (auto& [name, entry] : entries_) entry.frozen = false;
}

// ---- ModelSpec -------------------------------------------------------------

std::string ModelSpec::summary() const {
  std::string s = arch + "|in=" + std::to_string(input_shape[0]) + "x" +
                  std::to_string(input_shape[1]) + "x" +
                  std::to_string(input_shape[2]) +
                  "|classes=" + std::to_string(num_classes);
  for (const auto& l : layers) {
    s += strfmt("|%s:%s:f%d:m%d:k%d:s%d:p%d:u%d:r%.3f:%d%d%d", kind_tag(l.kind),
                l.name.c_str(), l.filters, l.mid, l.kernel, l.stride, l.pool,
                l.units, static_cast<double>(l.rate), l.relu ? 1 : 0,
                l.batch_norm ? 1 : 0, l.projection ? 1 : 0);
  }
  return s;
}

std::string ModelSpec::digest() const {
  return strfmt("%016llx",
                static_cast<unsigned long long>(fnv1a64(summary())));
}

// ---- Builders --------------------------------------------------------------

std::pair<ModelSpec, ParamStore> build_target(std::array<int, 3> input_shape,
                                              int num_classes, Rng& rng) {
  if (num_classes < 2) throw ShapeError("build_target: need >= 2 classes");
  const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
  if (c < 1 || h < 1 || w < 1) throw ShapeError("build_target: bad input shape");
  if (h / 16 < 1 || w / 16 < 1) {
    throw ShapeError(strfmt(
        "build_target: %dx%d input too small for four pooling stages", h, w));
  }

  ModelSpec spec;
  spec.arch = "target";
  spec.input_shape = input_shape;
  spec.num_classes = num_classes;

  auto conv = [](std::string name, int filters, int kernel, bool act) {
    LayerDesc l;
    l.kind = LayerKind::kConv;
    l.name = std::move(name);
    l.filters = filters;
    l.kernel = kernel;
    l.relu = act;
    return l;
  };
  auto pool = [](std::string name) {
    LayerDesc l;
    l.kind = LayerKind::kMaxPool;
    l.name = std::move(name);
    l.pool = 2;
    return l;
  };

  spec.layers.push_back(conv("stem.conv", 64, 3, true));
  spec.layers.push_back(pool("pool0"));
  const int block_filters[3] = {64, 128, 256};
  for (int i = 0; i < 3; ++i) {
    LayerDesc res;
    res.kind = LayerKind::kResidual;
    res.name = "block" + std::to_string(i + 1);
    res.filters = block_filters[i];
    res.kernel = 3;
    res.batch_norm = true;
    spec.layers.push_back(res);
    spec.layers.push_back(pool("pool" + std::to_string(i + 1)));
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kFlatten;
    l.name = "flatten";
    spec.layers.push_back(l);
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kDense;
    l.name = "dense";
    l.units = 128;
    l.relu = true;
    spec.layers.push_back(l);
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kDropout;
    l.name = "dropout";
    l.rate = 0.5f;
    spec.layers.push_back(l);
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kDense;
    l.name = "head";
    l.units = num_classes;
    spec.layers.push_back(l);
  }
  validate_spec(spec);

  ParamStore store;
  add_conv_params(store, rng, "stem.conv", 64, c, 3, 3, false);
  int chan = 64;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "block" + std::to_string(i + 1);
    const int out = block_filters[i];
    add_conv_params(store, rng, name + ".conv1", out, chan, 3, 3, true);
    add_conv_params(store, rng, name + ".conv2", out, out, 3, 3, true);
    add_conv_params(store, rng, name + ".shortcut", out, chan, 1, 1, true);
    chan = out;
  }
  const int flat = chan * (h / 16) * (w / 16);
  add_dense_params(store, rng, "dense", flat, 128);
  add_zero_dense_params(store, "head", 128, num_classes);
  return {std::move(spec), std::move(store)};
}

std::pair<ModelSpec, ParamStore> build_source(std::array<int, 3> input_shape,
                                              int num_classes, Rng& rng) {
  if (num_classes < 2) throw ShapeError("build_source: need >= 2 classes");
  const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
  if (h < 32 || w < 32) {
    throw ShapeError(strfmt(
        "build_source: input spatial extents must be >= 32, got %dx%d", h, w));
  }

  ModelSpec spec;
  spec.arch = "source";
  spec.input_shape = input_shape;
  spec.num_classes = num_classes;

  {
    LayerDesc l;
    l.kind = LayerKind::kConv;
    l.name = "stem.conv";
    l.filters = 64;
    l.kernel = 7;
    l.stride = 2;
    l.relu = true;
    l.batch_norm = true;
    spec.layers.push_back(l);
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kMaxPool;
    l.name = "stem.pool";
    l.pool = 2;
    spec.layers.push_back(l);
  }
  const int block_counts[4] = {3, 4, 6, 3};
  const int mids[4] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < block_counts[s]; ++b) {
      LayerDesc l;
      l.kind = LayerKind::kBottleneck;
      l.name = strfmt("stage%d.block%d", s + 1, b + 1);
      l.mid = mids[s];
      l.filters = mids[s] * 4;
      l.kernel = 3;
      l.stride = (b == 0 && s > 0) ? 2 : 1;
      l.projection = b == 0;
      l.batch_norm = true;
      spec.layers.push_back(l);
    }
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kGlobalAvgPool;
    l.name = "gap";
    spec.layers.push_back(l);
  }
  {
    LayerDesc l;
    l.kind = LayerKind::kDense;
    l.name = "head";
    l.units = num_classes;
    spec.layers.push_back(l);
  }
  validate_spec(spec);

  ParamStore store;
  add_conv_params(store, rng, "stem.conv", 64, c, 7, 7, true);
  int chan = 64;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < block_counts[s]; ++b) {
      const std::string name = strfmt("stage%d.block%d", s + 1, b + 1);
      const int mid = mids[s];
      const int out = mid * 4;
      add_conv_params(store, rng, name + ".conv1", mid, chan, 1, 1, true);
      add_conv_params(store, rng, name + ".conv2", mid, mid, 3, 3, true);
      add_conv_params(store, rng, name + ".conv3", out, mid, 1, 1, true);
      if (b == 0) {
        add_conv_params(store, rng, name + ".shortcut", out, chan, 1, 1, true);
      }
      chan = out;
    }
  }
  add_zero_dense_params(store, "head", chan, num_classes);
  return {std::move(spec), std::move(store)};
}

std::pair<ModelSpec, ParamStore> build_source(std::array<int, 3> input_shape,
                                              int num_classes) {
  Rng rng(0);
  return build_source(input_shape, num_classes, rng);
}

// ---- Forward execution -------------------------------------------------------

namespace {

Var track_param(Graph& graph, ParamStore& store, const std::string& name,
                ParamVars* params) {
  // Frozen entries receive no update, so their gradients are never needed;
  // leaving them untracked lets the tape skip whole backward branches.
  Var v = graph.leaf(store.tensor(name), !store.entry(name).frozen);
  if (params) params->emplace_back(name, v);
  return v;
}

// conv + optional batch norm + optional relu, same padding.
Var conv_unit(Graph& graph, ParamStore& store, const std::string& name, Var h,
              int stride, bool with_bn, bool with_relu, Mode mode,
              ParamVars* params) {
  Var w = track_param(graph, store, name + ".weight", params);
  Var b = track_param(graph, store, name + ".bias", params);
  h = conv2d(h, w, b, stride, Padding::kSame);
  if (with_bn) {
    Var gamma = track_param(graph, store, name + ".gamma", params);
    Var beta = track_param(graph, store, name + ".beta", params);
    // A frozen unit normalizes with its stored statistics and leaves them
    // untouched, so every tensor under the freeze prefix stays bitwise
    // invariant across a run.
    const Mode bn_mode =
        store.entry(name + ".running_mean").frozen ? Mode::kInfer : mode;
    h = batchnorm(h, gamma, beta, store.tensor(name + ".running_mean"),
                  store.tensor(name + ".running_var"), bn_mode);
  }
  if (with_relu) h = relu(h);
  return h;
}

Rng* stub_rng() {
  static Rng rng(0);  // never consumed in infer mode
  return &rng;
}

}  // namespace

Var residual_block_forward(Graph& graph, ParamStore& store,
                           const std::string& name, Var input, Mode mode,
                           ParamVars* params) {
  Var branch =
      conv_unit(graph, store, name + ".conv1", input, 1, true, true, mode,
                params);
  branch = conv_unit(graph, store, name + ".conv2", branch, 1, true, false,
                     mode, params);
  Var shortcut = conv_unit(graph, store, name + ".shortcut", input, 1, true,
                           false, mode, params);
  return relu(add(branch, shortcut));
}

Var bottleneck_block_forward(Graph& graph, ParamStore& store,
                             const std::string& name, int stride,
                             bool projection, Var input, Mode mode,
                             ParamVars* params) {
  Var branch = conv_unit(graph, store, name + ".conv1", input, stride, true,
                         true, mode, params);
  branch = conv_unit(graph, store, name + ".conv2", branch, 1, true, true,
                     mode, params);
  branch = conv_unit(graph, store, name + ".conv3", branch, 1, true, false,
                     mode, params);
  Var shortcut =
      projection ? conv_unit(graph, store, name + ".shortcut", input, stride,
                             true, false, mode, params)
                 : input;
  return relu(add(branch, shortcut));
}

namespace {

struct Executor {
  ParamStore& store;
  Graph& graph;
  Mode mode;
  Rng* dropout_rng;
  ParamVars* params;

  Var dense(const LayerDesc& l, Var h) {
    Var w = track_param(graph, store, l.name + ".weight", params);
    Var b = track_param(graph, store, l.name + ".bias", params);
    h = bias_add(matmul(h, w), b);
    if (l.relu) h = relu(h);
    return h;
  }

  Var run(const ModelSpec& spec, Var h) {
    for (const auto& l : spec.layers) {
      switch (l.kind) {
        case LayerKind::kConv:
          h = conv_unit(graph, store, l.name, h, l.stride, l.batch_norm,
                        l.relu, mode, params);
          break;
        case LayerKind::kMaxPool:
          h = maxpool2d(h, l.pool);
          break;
        case LayerKind::kResidual:
          h = residual_block_forward(graph, store, l.name, h, mode, params);
          break;
        case LayerKind::kBottleneck:
          h = bottleneck_block_forward(graph, store, l.name, l.stride,
                                       l.projection, h, mode, params);
          break;
        case LayerKind::kFlatten:
          h = flatten(h);
          break;
        case LayerKind::kGlobalAvgPool:
          h = global_avg_pool(h);
          break;
        case LayerKind::kDense:
          h = dense(l, h);
          break;
        case LayerKind::kDropout:
          if (mode == Mode::kTrain) {
            if (dropout_rng == nullptr) {
              throw Error("forward: dropout in train mode needs an rng");
            }
            h = dropout(h, l.rate, *dropout_rng, mode);
          } else {
            h = dropout(h, l.rate, *stub_rng(), mode);
          }
          break;
      }
    }
    return h;
  }
};

}  // namespace

ForwardResult forward(const ModelSpec& spec, ParamStore& store, Graph& graph,
                      const Tensor& batch, Mode mode, Rng* dropout_rng) {
  if (batch.rank() != 4 || batch.extent(1) != spec.input_shape[0] ||
      batch.extent(2) != spec.input_shape[1] ||
      batch.extent(3) != spec.input_shape[2]) {
    throw ShapeError(strfmt("forward: batch %s does not match input %dx%dx%d",
                            batch.shape_str().c_str(), spec.input_shape[0],
                            spec.input_shape[1], spec.input_shape[2]));
  }
  ForwardResult result;
  Executor exec{store, graph, mode, dropout_rng, &result.params};
  Var h = graph.leaf(batch, false);
  result.logits = exec.run(spec, h);
  return result;
}

LossResult model_loss(const ModelSpec& spec, ParamStore& store, Graph& graph,
                      const Tensor& batch, const std::vector<int>& labels,
                      Mode mode, Rng* dropout_rng) {
  ForwardResult fwd = forward(spec, store, graph, batch, mode, dropout_rng);
  SoftmaxXentResult xent = softmax_xent(fwd.logits, labels);
  return LossResult{xent.loss, std::move(xent.probs), std::move(fwd.params)};
}

}  // namespace resasr
