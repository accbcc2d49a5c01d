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

#include "resasr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "resasr/common.hpp"
#include "resasr/parallel.hpp"

namespace resasr {

namespace {

// acc[j] += w * row[j]; the fixed left-to-right order inside one accumulator
// keeps results independent of threading.
inline void axpy_acc(double* acc, double w, const float* row, int n) {
  for (int j = 0; j < n; ++j) acc[j] += w * static_cast<double>(row[j]);
}

// Eight fixed accumulation lanes combined in a fixed tree; deterministic and
// fast (independent FMA chains).
inline double dot8(const float* a, const float* b, int n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += static_cast<double>(a[i + 0]) * static_cast<double>(b[i + 0]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
    s4 += static_cast<double>(a[i + 4]) * static_cast<double>(b[i + 4]);
    s5 += static_cast<double>(a[i + 5]) * static_cast<double>(b[i + 5]);
    s6 += static_cast<double>(a[i + 6]) * static_cast<double>(b[i + 6]);
    s7 += static_cast<double>(a[i + 7]) * static_cast<double>(b[i + 7]);
  }
  double tail = 0;
  for (; i < n; ++i) {
    tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

inline double sum_f32(const float* a, int64_t n) {
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(a[i]);
  return s;
}

void ensure_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw DivergenceError(strfmt("%s produced non-finite values", op));
  }
}

// Nodes that no gradient flows through need no closure.
template <typename Fn>
std::function<void()> maybe_backprop(bool needed, Fn&& fn) {
  if (!needed) return {};
  return std::function<void()>(std::forward<Fn>(fn));
}

struct ConvGeom {
  int batch = 1;
  int cin = 0, h = 0, w = 0;
  int cout = 0, kh = 0, kw = 0;
  int stride = 1;
  int oh = 0, ow = 0;
  int pad_top = 0, pad_left = 0;
  bool batched = false;

  int cols() const { return oh * ow; }
  int patch() const { return cin * kh * kw; }
  int64_t in_plane() const { return static_cast<int64_t>(cin) * h * w; }
  int64_t out_plane() const { return static_cast<int64_t>(cout) * oh * ow; }
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& kernels, int stride,
                       Padding padding) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError(strfmt("conv2d: input rank must be 3 or 4, got %s",
                            x.shape_str().c_str()));
  }
  if (kernels.rank() != 4) {
    throw ShapeError(strfmt("conv2d: kernels must be rank 4, got %s",
                            kernels.shape_str().c_str()));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");

  ConvGeom g;
  g.batched = x.rank() == 4;
  g.batch = g.batched ? x.extent(0) : 1;
  g.cin = x.extent(g.batched ? 1 : 0);
  g.h = x.extent(g.batched ? 2 : 1);
  g.w = x.extent(g.batched ? 3 : 2);
  g.cout = kernels.extent(0);
  g.kh = kernels.extent(2);
  g.kw = kernels.extent(3);
  g.stride = stride;
  if (kernels.extent(1) != g.cin) {
    throw ShapeError(strfmt("conv2d: kernel channels %d vs input channels %d",
                            kernels.extent(1), g.cin));
  }
  if (padding == Padding::kSame) {
    g.oh = (g.h + stride - 1) / stride;
    g.ow = (g.w + stride - 1) / stride;
    const int need_h = std::max((g.oh - 1) * stride + g.kh - g.h, 0);
    const int need_w = std::max((g.ow - 1) * stride + g.kw - g.w, 0);
    g.pad_top = need_h / 2;
    g.pad_left = need_w / 2;
  } else {
    if (g.kh > g.h || g.kw > g.w) {
      throw ShapeError(
          strfmt("conv2d: %dx%d kernel larger than %dx%d input (valid "
                 "padding)",
                 g.kh, g.kw, g.h, g.w));
    }
    g.oh = (g.h - g.kh) / stride + 1;
    g.ow = (g.w - g.kw) / stride + 1;
  }
  return g;
}

// Expands one sample into patch-major columns: col[k][m] where
// k = (c*kh + dy)*kw + dx and m = oh*ow_total + ow. Out-of-range cells are 0.
void im2col(const float* x, const ConvGeom& g, float* col) {
  const int m_total = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    const float* plane = x + static_cast<int64_t>(c) * g.h * g.w;
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        float* row = col +
                     static_cast<int64_t>((c * g.kh + dy) * g.kw + dx) *
                         m_total;
        for (int oh = 0; oh < g.oh; ++oh) {
          const int ih = oh * g.stride - g.pad_top + dy;
          float* out = row + static_cast<int64_t>(oh) * g.ow;
          if (ih < 0 || ih >= g.h) {
            std::memset(out, 0, sizeof(float) * static_cast<size_t>(g.ow));
            continue;
          }
          const float* xrow = plane + static_cast<int64_t>(ih) * g.w;
          if (g.stride == 1) {
            // Contiguous middle, zero edges.
            const int shift = dx - g.pad_left;  // iw = ow + shift
            const int lo = std::max(0, -shift);
            const int hi = std::min(g.ow, g.w - shift);
            for (int ow = 0; ow < std::min(lo, g.ow); ++ow) out[ow] = 0.0f;
            if (hi > lo) {
              std::memcpy(out + lo, xrow + lo + shift,
                          sizeof(float) * static_cast<size_t>(hi - lo));
            }
            for (int ow = std::max(hi, 0); ow < g.ow; ++ow) out[ow] = 0.0f;
          } else {
            for (int ow = 0; ow < g.ow; ++ow) {
              const int iw = ow * g.stride - g.pad_left + dx;
              out[ow] = (iw >= 0 && iw < g.w) ? xrow[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Scatters patch-gradient columns back onto the input plane. `dcol` is
// [patch x cols] in double; adds into dx_acc (cin*h*w doubles).
void col2im_add(const double* dcol, const ConvGeom& g, double* dx_acc) {
  const int m_total = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    double* plane = dx_acc + static_cast<int64_t>(c) * g.h * g.w;
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        const double* row = dcol +
                            static_cast<int64_t>((c * g.kh + dy) * g.kw + dx) *
                                m_total;
        for (int oh = 0; oh < g.oh; ++oh) {
          const int ih = oh * g.stride - g.pad_top + dy;
          if (ih < 0 || ih >= g.h) continue;
          double* xrow = plane + static_cast<int64_t>(ih) * g.w;
          const double* r = row + static_cast<int64_t>(oh) * g.ow;
          for (int ow = 0; ow < g.ow; ++ow) {
            const int iw = ow * g.stride - g.pad_left + dx;
            if (iw >= 0 && iw < g.w) xrow[iw] += r[ow];
          }
        }
      }
    }
  }
}

// Patch-minor variant: colT[m][k]. Long contiguous rows of length K; the
// better layout when the output map is small (deep layers).
void im2colT(const float* x, const ConvGeom& g, float* colT) {
  const int K = g.patch();
  for (int oh = 0; oh < g.oh; ++oh) {
    for (int ow = 0; ow < g.ow; ++ow) {
      float* row = colT + static_cast<int64_t>(oh * g.ow + ow) * K;
      int k = 0;
      for (int c = 0; c < g.cin; ++c) {
        const float* plane = x + static_cast<int64_t>(c) * g.h * g.w;
        for (int dy = 0; dy < g.kh; ++dy) {
          const int ih = oh * g.stride - g.pad_top + dy;
          if (ih < 0 || ih >= g.h) {
            for (int dx = 0; dx < g.kw; ++dx) row[k++] = 0.0f;
            continue;
          }
          const float* xrow = plane + static_cast<int64_t>(ih) * g.w;
          for (int dx = 0; dx < g.kw; ++dx) {
            const int iw = ow * g.stride - g.pad_left + dx;
            row[k++] = (iw >= 0 && iw < g.w) ? xrow[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2imT_add(const double* dcolT, const ConvGeom& g, double* dx_acc) {
  const int K = g.patch();
  for (int oh = 0; oh < g.oh; ++oh) {
    for (int ow = 0; ow < g.ow; ++ow) {
      const double* row = dcolT + static_cast<int64_t>(oh * g.ow + ow) * K;
      int k = 0;
      for (int c = 0; c < g.cin; ++c) {
        double* plane = dx_acc + static_cast<int64_t>(c) * g.h * g.w;
        for (int dy = 0; dy < g.kh; ++dy) {
          const int ih = oh * g.stride - g.pad_top + dy;
          if (ih < 0 || ih >= g.h) {
            k += g.kw;
            continue;
          }
          double* xrow = plane + static_cast<int64_t>(ih) * g.w;
          for (int dx = 0; dx < g.kw; ++dx, ++k) {
            const int iw = ow * g.stride - g.pad_left + dx;
            if (iw >= 0 && iw < g.w) xrow[iw] += row[k];
          }
        }
      }
    }
  }
}

// Layout choice: wide maps favor patch-major columns (axpy over m), narrow
// maps favor patch-minor rows (long dots over k).
inline bool prefer_colT(const ConvGeom& g) { return g.cols() < g.patch(); }

// One sample of the forward pass; col_buf has K*M floats scratch.
void conv_forward_sample(const ConvGeom& g, const float* x, const float* w,
                         const float* bias, float* y, float* col_buf,
                         double* acc_buf) {
  const int K = g.patch();
  const int M = g.cols();
  if (prefer_colT(g)) {
    im2colT(x, g, col_buf);
    for (int co = 0; co < g.cout; ++co) {
      const float* wrow = w + static_cast<int64_t>(co) * K;
      const double init = bias ? static_cast<double>(bias[co]) : 0.0;
      float* yrow = y + static_cast<int64_t>(co) * M;
      for (int m = 0; m < M; ++m) {
        yrow[m] = static_cast<float>(
            init + dot8(wrow, col_buf + static_cast<int64_t>(m) * K, K));
      }
    }
  } else {
    im2col(x, g, col_buf);
    for (int co = 0; co < g.cout; ++co) {
      const double init = bias ? static_cast<double>(bias[co]) : 0.0;
      for (int m = 0; m < M; ++m) acc_buf[m] = init;
      const float* wrow = w + static_cast<int64_t>(co) * K;
      for (int k = 0; k < K; ++k) {
        axpy_acc(acc_buf, wrow[k], col_buf + static_cast<int64_t>(k) * M, M);
      }
      float* yrow = y + static_cast<int64_t>(co) * M;
      for (int m = 0; m < M; ++m) yrow[m] = static_cast<float>(acc_buf[m]);
    }
  }
}

}  // namespace

namespace {
inline Graph* graph_of_checked(Graph* g, const char* op) {
  if (g == nullptr) throw Error(strfmt("%s: invalid operand", op));
  return g;
}
}  // namespace

#define RESASR_GRAPH_OF(v, op) graph_of_checked((v).graph_, (op))

// ---- Graph core ------------------------------------------------------------

Var Graph::leaf(Tensor value, bool needs_grad) {
  return emit(std::move(value), needs_grad, nullptr);
}

Var Graph::emit(Tensor value, bool needs_grad, std::function<void()> backprop) {
  Node n;
  n.tensor = std::move(value);
  n.tensor.drop_grad();  // stale buffers from copied tensors must not leak in
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Graph::value(Var v) const { return node(v.id_).tensor; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v.id_);
  if (!n.tensor.has_grad()) {
    throw Error("grad requested before backward or for an untracked node");
  }
  return Tensor(n.tensor.shape(), n.tensor.grad_values());
}

const std::vector<float>& Graph::grad_ref(Var v) const {
  const Node& n = node(v.id_);
  if (!n.tensor.has_grad()) {
    throw Error("grad requested before backward or for an untracked node");
  }
  return n.tensor.grad_values();
}

bool Graph::needs_grad(Var v) const { return node(v.id_).needs_grad; }

void Graph::backward(Var root) {
  if (backward_done_) throw Error("backward may only run once per graph");
  if (root.graph_ != this) throw Error("backward: root from another graph");
  Node& r = node(root.id_);
  if (r.tensor.numel() != 1) {
    throw Error(strfmt("backward: root must be scalar, got %s",
                       r.tensor.shape_str().c_str()));
  }
  if (!r.needs_grad) {
    throw Error("backward: root does not depend on any tracked leaf");
  }
  for (auto& n : nodes_) {
    if (n.needs_grad) n.tensor.alloc_grad();
  }
  r.tensor.grad()[0] = 1.0f;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.needs_grad && n.backprop) n.backprop();
  }
  backward_done_ = true;
}

// ---- Elementwise and structural ops ----------------------------------------

Var add(Var a, Var b) {
  Graph* g = RESASR_GRAPH_OF(a, "add");
  if (RESASR_GRAPH_OF(b, "add") != g) throw Error("add: operands from mixed graphs");
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (!ta.same_shape(tb)) {
    throw ShapeError(strfmt("add: shape mismatch %s vs %s",
                            ta.shape_str().c_str(), tb.shape_str().c_str()));
  }
  Tensor y(ta.shape());
  const int64_t n = ta.numel();
  const float* pa = ta.data();
  const float* pb = tb.data();
  float* py = y.data();
  parallel_for(0, n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) py[i] = pa[i] + pb[i];
  });
  ensure_finite(y, "add");

  const bool needs = g->needs_grad(a) || g->needs_grad(b);
  const int aid = a.id_, bid = b.id_;
  const int yid = g->size();
  auto backprop = [g, aid, bid, yid, n]() {
    const float* dy = g->node(yid).tensor.grad();
    for (int id : {aid, bid}) {
      if (!g->node(id).needs_grad) continue;
      float* dst = g->node(id).tensor.grad();
      parallel_for(0, n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) dst[i] += dy[i];
      });
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

Var mul(Var a, Var b) {
  Graph* g = RESASR_GRAPH_OF(a, "mul");
  if (RESASR_GRAPH_OF(b, "mul") != g) throw Error("mul: operands from mixed graphs");
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (!ta.same_shape(tb)) {
    throw ShapeError(strfmt("mul: shape mismatch %s vs %s",
                            ta.shape_str().c_str(), tb.shape_str().c_str()));
  }
  Tensor y(ta.shape());
  const int64_t n = ta.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = ta[i] * tb[i];
  ensure_finite(y, "mul");

  const bool needs = g->needs_grad(a) || g->needs_grad(b);
  const int aid = a.id_, bid = b.id_;
  const int yid = g->size();
  auto backprop = [g, aid, bid, yid, n]() {
    const float* dy = g->node(yid).tensor.grad();
    if (g->node(aid).needs_grad) {
      const float* pb = g->node(bid).tensor.data();
      float* da = g->node(aid).tensor.grad();
      for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * pb[i];
    }
    if (g->node(bid).needs_grad) {
      const float* pa = g->node(aid).tensor.data();
      float* db = g->node(bid).tensor.grad();
      for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * pa[i];
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

Var relu(Var x) {
  Graph* g = RESASR_GRAPH_OF(x, "relu");
  const Tensor& tx = x.value();
  Tensor y(tx.shape());
  const int64_t n = tx.numel();
  const float* px = tx.data();
  float* py = y.data();
  parallel_for(0, n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) py[i] = px[i] > 0.0f ? px[i] : 0.0f;
  });

  const bool needs = g->needs_grad(x);
  const int xid = x.id_;
  const int yid = g->size();
  auto backprop = [g, xid, yid, n]() {
    if (!g->node(xid).needs_grad) return;
    const float* dy = g->node(yid).tensor.grad();
    const float* px = g->node(xid).tensor.data();
    float* dx = g->node(xid).tensor.grad();
    parallel_for(0, n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        if (px[i] > 0.0f) dx[i] += dy[i];
      }
    });
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

Var flatten(Var x) {
  Graph* g = RESASR_GRAPH_OF(x, "flatten");
  const Tensor& tx = x.value();
  std::vector<int> shape;
  if (tx.rank() <= 1) {
    shape = tx.shape();
  } else {
    int64_t rest = 1;
    for (int i = 1; i < tx.rank(); ++i) rest *= tx.extent(i);
    shape = {tx.extent(0), static_cast<int>(rest)};
  }
  Tensor y(std::move(shape), tx.values());

  const bool needs = g->needs_grad(x);
  const int xid = x.id_;
  const int yid = g->size();
  const int64_t n = tx.numel();
  auto backprop = [g, xid, yid, n]() {
    if (!g->node(xid).needs_grad) return;
    const float* dy = g->node(yid).tensor.grad();
    float* dx = g->node(xid).tensor.grad();
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

Var sum(Var x) {
  Graph* g = RESASR_GRAPH_OF(x, "sum");
  const Tensor& tx = x.value();
  Tensor y({1});
  y[0] = static_cast<float>(sum_f32(tx.data(), tx.numel()));
  ensure_finite(y, "sum");

  const bool needs = g->needs_grad(x);
  const int xid = x.id_;
  const int yid = g->size();
  const int64_t n = tx.numel();
  auto backprop = [g, xid, yid, n]() {
    if (!g->node(xid).needs_grad) return;
    const float s = g->node(yid).tensor.grad()[0];
    float* dx = g->node(xid).tensor.grad();
    for (int64_t i = 0; i < n; ++i) dx[i] += s;
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

// ---- Dense algebra ----------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph* g = RESASR_GRAPH_OF(a, "matmul");
  if (RESASR_GRAPH_OF(b, "matmul") != g) {
    throw Error("matmul: operands from mixed graphs");
  }
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0)) {
    throw ShapeError(strfmt("matmul: incompatible shapes %s and %s",
                            ta.shape_str().c_str(), tb.shape_str().c_str()));
  }
  const int m = ta.extent(0), k = ta.extent(1), n = tb.extent(1);
  Tensor y({m, n});
  {
    const float* pa = ta.data();
    const float* pb = tb.data();
    float* py = y.data();
    parallel_for(0, m, [&](int64_t lo, int64_t hi) {
      std::vector<double> acc(static_cast<size_t>(n));
      for (int64_t i = lo; i < hi; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = pa + i * k;
        for (int kk = 0; kk < k; ++kk) {
          axpy_acc(acc.data(), arow[kk], pb + static_cast<int64_t>(kk) * n, n);
        }
        float* yrow = py + i * n;
        for (int j = 0; j < n; ++j) yrow[j] = static_cast<float>(acc[j]);
      }
    });
  }
  ensure_finite(y, "matmul");

  const bool needs = g->needs_grad(a) || g->needs_grad(b);
  const int aid = a.id_, bid = b.id_;
  const int yid = g->size();
  auto backprop = [g, aid, bid, yid, m, k, n]() {
    const float* dy = g->node(yid).tensor.grad();
    if (g->node(aid).needs_grad) {
      // dA = dY . B^t
      const float* pb = g->node(bid).tensor.data();
      float* da = g->node(aid).tensor.grad();
      parallel_for(0, m, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          const float* dyrow = dy + i * n;
          float* darow = da + i * k;
          for (int kk = 0; kk < k; ++kk) {
            darow[kk] += static_cast<float>(
                dot8(dyrow, pb + static_cast<int64_t>(kk) * n, n));
          }
        }
      });
    }
    if (g->node(bid).needs_grad) {
      // dB = A^t . dY
      const float* pa = g->node(aid).tensor.data();
      float* db = g->node(bid).tensor.grad();
      parallel_for(0, k, [&](int64_t lo, int64_t hi) {
        std::vector<double> acc(static_cast<size_t>(n));
        for (int64_t kk = lo; kk < hi; ++kk) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int i = 0; i < m; ++i) {
            axpy_acc(acc.data(), pa[static_cast<int64_t>(i) * k + kk],
                     dy + static_cast<int64_t>(i) * n, n);
          }
          float* dbrow = db + kk * n;
          for (int j = 0; j < n; ++j) {
            dbrow[j] += static_cast<float>(acc[j]);
          }
        }
      });
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

Var bias_add(Var x, Var bias) {
  Graph* g = RESASR_GRAPH_OF(x, "bias_add");
  if (RESASR_GRAPH_OF(bias, "bias_add") != g) {
    throw Error("bias_add: operands from mixed graphs");
  }
  const Tensor& tx = x.value();
  const Tensor& tb = bias.value();
  if (tx.rank() != 2 || tb.rank() != 1 || tb.extent(0) != tx.extent(1)) {
    throw ShapeError(strfmt("bias_add: shapes %s and %s",
                            tx.shape_str().c_str(), tb.shape_str().c_str()));
  }
  const int rows = tx.extent(0), cols = tx.extent(1);
  Tensor y(tx.shape());
  const float* px = tx.data();
  const float* pb = tb.data();
  float* py = y.data();
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      py[static_cast<int64_t>(i) * cols + j] =
          px[static_cast<int64_t>(i) * cols + j] + pb[j];
    }
  }
  ensure_finite(y, "bias_add");

  const bool needs = g->needs_grad(x) || g->needs_grad(bias);
  const int xid = x.id_, bid = bias.id_;
  const int yid = g->size();
  auto backprop = [g, xid, bid, yid, rows, cols]() {
    const float* dy = g->node(yid).tensor.grad();
    if (g->node(xid).needs_grad) {
      float* dx = g->node(xid).tensor.grad();
      const int64_t n = static_cast<int64_t>(rows) * cols;
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
    }
    if (g->node(bid).needs_grad) {
      std::vector<double> acc(static_cast<size_t>(cols), 0.0);
      for (int i = 0; i < rows; ++i) {
        const float* row = dy + static_cast<int64_t>(i) * cols;
        for (int j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += row[j];
      }
      float* db = g->node(bid).tensor.grad();
      for (int j = 0; j < cols; ++j) {
        db[j] += static_cast<float>(acc[static_cast<size_t>(j)]);
      }
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

// ---- Convolution -----------------------------------------------------------

Var conv2d(Var x, Var kernels, Var bias, int stride, Padding padding) {
  Graph* g = RESASR_GRAPH_OF(x, "conv2d");
  if (RESASR_GRAPH_OF(kernels, "conv2d") != g) {
    throw Error("conv2d: operands from mixed graphs");
  }
  const bool has_bias = bias.valid();
  if (has_bias && RESASR_GRAPH_OF(bias, "conv2d") != g) {
    throw Error("conv2d: operands from mixed graphs");
  }
  const Tensor& tx = x.value();
  const Tensor& tw = kernels.value();
  const ConvGeom geom = conv_geometry(tx, tw, stride, padding);
  if (has_bias) {
    const Tensor& tb = bias.value();
    if (tb.rank() != 1 || tb.extent(0) != geom.cout) {
      throw ShapeError(strfmt("conv2d: bias %s vs %d output channels",
                              tb.shape_str().c_str(), geom.cout));
    }
  }

  const int K = geom.patch();
  const int M = geom.cols();
  Tensor y(geom.batched
               ? std::vector<int>{geom.batch, geom.cout, geom.oh, geom.ow}
               : std::vector<int>{geom.cout, geom.oh, geom.ow});
  {
    const float* px = tx.data();
    const float* pw = tw.data();
    const float* pb = has_bias ? bias.value().data() : nullptr;
    float* py = y.data();
    parallel_for(0, geom.batch, [&](int64_t lo, int64_t hi) {
      std::vector<float> col(static_cast<size_t>(K) * M);
      std::vector<double> acc(static_cast<size_t>(M));
      for (int64_t nn = lo; nn < hi; ++nn) {
        conv_forward_sample(geom, px + nn * geom.in_plane(), pw, pb,
                            py + nn * geom.out_plane(), col.data(),
                            acc.data());
      }
    });
  }
  ensure_finite(y, "conv2d");

  const bool needs = g->needs_grad(x) || g->needs_grad(kernels) ||
                     (has_bias && g->needs_grad(bias));
  const int xid = x.id_, wid = kernels.id_;
  const int bid = has_bias ? bias.id_ : -1;
  const int yid = g->size();
  auto backprop = [g, xid, wid, bid, yid, geom, K, M]() {
    const Tensor& tx = g->node(xid).tensor;
    const Tensor& tw = g->node(wid).tensor;
    const float* dy = g->node(yid).tensor.grad();
    const int N = geom.batch;

    if (g->node(wid).needs_grad) {
      // Samples are split over a fixed number of chunks (independent of the
      // thread count), each with its own accumulator; chunks combine in
      // ascending order, so the (n, m) reduction order never changes.
      const int nchunks = std::min(4, N);
      const int64_t wn = static_cast<int64_t>(geom.cout) * K;
      std::vector<double> acc(static_cast<size_t>(nchunks) * wn, 0.0);
      const float* px = tx.data();
      const bool colT = prefer_colT(geom);
      parallel_for(0, nchunks, [&](int64_t clo, int64_t chi) {
        std::vector<float> col(static_cast<size_t>(K) * M);
        for (int64_t chunk = clo; chunk < chi; ++chunk) {
          double* cacc = acc.data() + chunk * wn;
          const int n_begin = static_cast<int>(chunk) * N / nchunks;
          const int n_end = static_cast<int>(chunk + 1) * N / nchunks;
          for (int nn = n_begin; nn < n_end; ++nn) {
            const float* dyn =
                dy + static_cast<int64_t>(nn) * geom.out_plane();
            if (colT) {
              im2colT(px + static_cast<int64_t>(nn) * geom.in_plane(), geom,
                      col.data());
              for (int co = 0; co < geom.cout; ++co) {
                double* arow = cacc + static_cast<int64_t>(co) * K;
                const float* dyrow = dyn + static_cast<int64_t>(co) * M;
                for (int m = 0; m < M; ++m) {
                  axpy_acc(arow, dyrow[m],
                           col.data() + static_cast<int64_t>(m) * K, K);
                }
              }
            } else {
              im2col(px + static_cast<int64_t>(nn) * geom.in_plane(), geom,
                     col.data());
              for (int co = 0; co < geom.cout; ++co) {
                double* arow = cacc + static_cast<int64_t>(co) * K;
                const float* dyrow = dyn + static_cast<int64_t>(co) * M;
                for (int k = 0; k < K; ++k) {
                  arow[k] += dot8(dyrow,
                                  col.data() + static_cast<int64_t>(k) * M, M);
                }
              }
            }
          }
        }
      });
      float* dw = g->node(wid).tensor.grad();
      for (int64_t i = 0; i < wn; ++i) {
        double s = 0.0;
        for (int c = 0; c < nchunks; ++c) {
          s += acc[static_cast<size_t>(c) * wn + static_cast<size_t>(i)];
        }
        dw[i] += static_cast<float>(s);
      }
    }
    if (bid >= 0 && g->node(bid).needs_grad) {
      float* db = g->node(bid).tensor.grad();
      for (int co = 0; co < geom.cout; ++co) {
        double s = 0;
        for (int nn = 0; nn < N; ++nn) {
          s += sum_f32(dy + nn * geom.out_plane() + static_cast<int64_t>(co) * M,
                       M);
        }
        db[co] += static_cast<float>(s);
      }
    }
    if (g->node(xid).needs_grad) {
      const float* pw = tw.data();
      float* dx = g->node(xid).tensor.grad();
      const bool colT = prefer_colT(geom);
      parallel_for(0, N, [&](int64_t lo, int64_t hi) {
        std::vector<double> dcol(static_cast<size_t>(K) * M);
        std::vector<double> dxbuf(static_cast<size_t>(geom.in_plane()));
        for (int64_t nn = lo; nn < hi; ++nn) {
          const float* dyn = dy + nn * geom.out_plane();
          if (colT) {
            for (int m = 0; m < M; ++m) {
              double* arow = dcol.data() + static_cast<int64_t>(m) * K;
              std::fill(arow, arow + K, 0.0);
              for (int co = 0; co < geom.cout; ++co) {
                axpy_acc(arow, dyn[static_cast<int64_t>(co) * M + m],
                         pw + static_cast<int64_t>(co) * K, K);
              }
            }
          } else {
            for (int k = 0; k < K; ++k) {
              double* arow = dcol.data() + static_cast<int64_t>(k) * M;
              std::fill(arow, arow + M, 0.0);
              for (int co = 0; co < geom.cout; ++co) {
                axpy_acc(arow, pw[static_cast<int64_t>(co) * K + k],
                         dyn + static_cast<int64_t>(co) * M, M);
              }
            }
          }
          std::fill(dxbuf.begin(), dxbuf.end(), 0.0);
          if (colT) {
            col2imT_add(dcol.data(), geom, dxbuf.data());
          } else {
            col2im_add(dcol.data(), geom, dxbuf.data());
          }
          float* dxn = dx + nn * geom.in_plane();
          for (int64_t i = 0; i < geom.in_plane(); ++i) {
            dxn[i] += static_cast<float>(dxbuf[static_cast<size_t>(i)]);
          }
        }
      });
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

// ---- Pooling ---------------------------------------------------------------

Var maxpool2d(Var x, int pool) {
  Graph* g = RESASR_GRAPH_OF(x, "maxpool2d");
  const Tensor& tx = x.value();
  if (tx.rank() != 3 && tx.rank() != 4) {
    throw ShapeError(strfmt("maxpool2d: input rank must be 3 or 4, got %s",
                            tx.shape_str().c_str()));
  }
  if (pool < 1) throw ShapeError("maxpool2d: pool must be >= 1");
  const bool batched = tx.rank() == 4;
  const int n = batched ? tx.extent(0) : 1;
  const int c = tx.extent(batched ? 1 : 0);
  const int h = tx.extent(batched ? 2 : 1);
  const int w = tx.extent(batched ? 3 : 2);
  const int oh = h / pool, ow = w / pool;
  if (oh < 1 || ow < 1) {
    throw ShapeError(strfmt("maxpool2d: pool %d collapses %dx%d input", pool,
                            h, w));
  }
  Tensor y(batched ? std::vector<int>{n, c, oh, ow}
                   : std::vector<int>{c, oh, ow});
  auto argmax = std::make_shared<std::vector<int32_t>>(
      static_cast<size_t>(n) * c * oh * ow);
  {
    const float* px = tx.data();
    float* py = y.data();
    int32_t* parg = argmax->data();
    const int64_t planes = static_cast<int64_t>(n) * c;
    parallel_for(0, planes, [&](int64_t lo, int64_t hi) {
      for (int64_t p = lo; p < hi; ++p) {
        const float* plane = px + p * h * w;
        float* yplane = py + p * oh * ow;
        int32_t* aplane = parg + p * oh * ow;
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            float best = plane[static_cast<int64_t>(i) * pool * w + j * pool];
            int32_t besti =
                static_cast<int32_t>(i * pool * w + j * pool);
            for (int di = 0; di < pool; ++di) {
              const int ih = i * pool + di;
              for (int dj = 0; dj < pool; ++dj) {
                const int iw = j * pool + dj;
                const float v = plane[static_cast<int64_t>(ih) * w + iw];
                if (v > best) {  // first index wins ties
                  best = v;
                  besti = static_cast<int32_t>(ih * w + iw);
                }
              }
            }
            yplane[static_cast<int64_t>(i) * ow + j] = best;
            aplane[static_cast<int64_t>(i) * ow + j] = besti;
          }
        }
      }
    });
  }

  const bool needs = g->needs_grad(x);
  const int xid = x.id_;
  const int yid = g->size();
  const int64_t planes = static_cast<int64_t>(n) * c;
  const int64_t in_plane = static_cast<int64_t>(h) * w;
  const int64_t out_plane = static_cast<int64_t>(oh) * ow;
  auto backprop = [g, xid, yid, argmax, planes, in_plane, out_plane]() {
    if (!g->node(xid).needs_grad) return;
    const float* dy = g->node(yid).tensor.grad();
    float* dx = g->node(xid).tensor.grad();
    const int32_t* parg = argmax->data();
    parallel_for(0, planes, [&](int64_t lo, int64_t hi) {
      for (int64_t p = lo; p < hi; ++p) {
        float* dxplane = dx + p * in_plane;
        const float* dyplane = dy + p * out_plane;
        const int32_t* aplane = parg + p * out_plane;
        for (int64_t m = 0; m < out_plane; ++m) {
          dxplane[aplane[m]] += dyplane[m];
        }
      }
    });
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

Var global_avg_pool(Var x) {
  Graph* g = RESASR_GRAPH_OF(x, "global_avg_pool");
  const Tensor& tx = x.value();
  if (tx.rank() != 4) {
    throw ShapeError(strfmt("global_avg_pool: want rank 4, got %s",
                            tx.shape_str().c_str()));
  }
  const int n = tx.extent(0), c = tx.extent(1);
  const int64_t sp = static_cast<int64_t>(tx.extent(2)) * tx.extent(3);
  Tensor y({n, c});
  const float* px = tx.data();
  float* py = y.data();
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    py[p] = static_cast<float>(sum_f32(px + p * sp, sp) /
                               static_cast<double>(sp));
  }
  ensure_finite(y, "global_avg_pool");

  const bool needs = g->needs_grad(x);
  const int xid = x.id_;
  const int yid = g->size();
  const int64_t planes = static_cast<int64_t>(n) * c;
  auto backprop = [g, xid, yid, planes, sp]() {
    if (!g->node(xid).needs_grad) return;
    const float* dy = g->node(yid).tensor.grad();
    float* dx = g->node(xid).tensor.grad();
    const float inv = 1.0f / static_cast<float>(sp);
    for (int64_t p = 0; p < planes; ++p) {
      const float v = dy[p] * inv;
      float* row = dx + p * sp;
      for (int64_t i = 0; i < sp; ++i) row[i] += v;
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

// ---- Batch normalization -----------------------------------------------------

Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean,
              Tensor& running_var, Mode mode) {
  Graph* g = RESASR_GRAPH_OF(x, "batchnorm");
  if (RESASR_GRAPH_OF(gamma, "batchnorm") != g || RESASR_GRAPH_OF(beta, "batchnorm") != g) {
    throw Error("batchnorm: operands from mixed graphs");
  }
  const Tensor& tx = x.value();
  if (tx.rank() < 2) {
    throw ShapeError(strfmt("batchnorm: want rank >= 2, got %s",
                            tx.shape_str().c_str()));
  }
  const int n = tx.extent(0);
  const int c = tx.extent(1);
  int64_t sp = 1;
  for (int i = 2; i < tx.rank(); ++i) sp *= tx.extent(i);
  const int64_t count = static_cast<int64_t>(n) * sp;
  auto check_vec = [&](const Tensor& t, const char* what) {
    if (t.rank() != 1 || t.extent(0) != c) {
      throw ShapeError(strfmt("batchnorm: %s must have shape [%d], got %s",
                              what, c, t.shape_str().c_str()));
    }
  };
  check_vec(gamma.value(), "gamma");
  check_vec(beta.value(), "beta");
  check_vec(running_mean, "running_mean");
  check_vec(running_var, "running_var");
  if (mode == Mode::kTrain && n < 2) {
    throw ShapeError("batchnorm: train mode needs a batch of at least 2");
  }

  auto stats = std::make_shared<std::vector<double>>(
      static_cast<size_t>(2) * c);  // [mean..., inv_std...]
  double* mean = stats->data();
  double* inv_std = stats->data() + c;
  const float* px = tx.data();
  const int64_t chan_stride = sp;
  const int64_t batch_stride = static_cast<int64_t>(c) * sp;

  if (mode == Mode::kTrain) {
    parallel_for(0, c, [&](int64_t lo, int64_t hi) {
      for (int64_t ch = lo; ch < hi; ++ch) {
        double s = 0;
        for (int b = 0; b < n; ++b) {
          s += sum_f32(px + b * batch_stride + ch * chan_stride, sp);
        }
        const double mu = s / static_cast<double>(count);
        double v = 0;
        for (int b = 0; b < n; ++b) {
          const float* row = px + b * batch_stride + ch * chan_stride;
          for (int64_t i = 0; i < sp; ++i) {
            const double d = static_cast<double>(row[i]) - mu;
            v += d * d;
          }
        }
        const double var = v / static_cast<double>(count);
        mean[ch] = mu;
        inv_std[ch] = 1.0 / std::sqrt(var + static_cast<double>(kBatchNormEps));
        running_mean[ch] = static_cast<float>(
            static_cast<double>(kBatchNormMomentum) * running_mean[ch] +
            (1.0 - static_cast<double>(kBatchNormMomentum)) * mu);
        running_var[ch] = static_cast<float>(
            static_cast<double>(kBatchNormMomentum) * running_var[ch] +
            (1.0 - static_cast<double>(kBatchNormMomentum)) * var);
      }
    });
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = static_cast<double>(running_mean[ch]);
      inv_std[ch] = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) +
                                    static_cast<double>(kBatchNormEps));
    }
  }

  Tensor y(tx.shape());
  {
    const float* pg = gamma.value().data();
    const float* pbeta = beta.value().data();
    float* py = y.data();
    parallel_for(0, c, [&](int64_t lo, int64_t hi) {
      for (int64_t ch = lo; ch < hi; ++ch) {
        const double mu = mean[ch];
        const double inv = inv_std[ch];
        const double gam = static_cast<double>(pg[ch]);
        const double bet = static_cast<double>(pbeta[ch]);
        for (int b = 0; b < n; ++b) {
          const float* row = px + b * batch_stride + ch * chan_stride;
          float* out = py + b * batch_stride + ch * chan_stride;
          for (int64_t i = 0; i < sp; ++i) {
            out[i] = static_cast<float>(
                (static_cast<double>(row[i]) - mu) * inv * gam + bet);
          }
        }
      }
    });
  }
  ensure_finite(y, "batchnorm");

  const bool needs =
      g->needs_grad(x) || g->needs_grad(gamma) || g->needs_grad(beta);
  const int xid = x.id_, gid = gamma.id_, bid = beta.id_;
  const int yid = g->size();
  const bool train = mode == Mode::kTrain;
  auto backprop = [g, xid, gid, bid, yid, stats, n, c, sp, count, train,
                   batch_stride, chan_stride]() {
    const double* mean = stats->data();
    const double* inv_std = stats->data() + c;
    const float* px = g->node(xid).tensor.data();
    const float* pg = g->node(gid).tensor.data();
    const float* dy = g->node(yid).tensor.grad();
    const bool need_x = g->node(xid).needs_grad;
    const bool need_g = g->node(gid).needs_grad;
    const bool need_b = g->node(bid).needs_grad;
    float* dx = need_x ? g->node(xid).tensor.grad() : nullptr;
    float* dgamma = need_g ? g->node(gid).tensor.grad() : nullptr;
    float* dbeta = need_b ? g->node(bid).tensor.grad() : nullptr;
    parallel_for(0, c, [&](int64_t lo, int64_t hi) {
      for (int64_t ch = lo; ch < hi; ++ch) {
        const double mu = mean[ch];
        const double inv = inv_std[ch];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int b = 0; b < n; ++b) {
          const float* xrow = px + b * batch_stride + ch * chan_stride;
          const float* dyrow = dy + b * batch_stride + ch * chan_stride;
          for (int64_t i = 0; i < sp; ++i) {
            const double xhat = (static_cast<double>(xrow[i]) - mu) * inv;
            sum_dy += static_cast<double>(dyrow[i]);
            sum_dy_xhat += static_cast<double>(dyrow[i]) * xhat;
          }
        }
        if (dgamma) dgamma[ch] += static_cast<float>(sum_dy_xhat);
        if (dbeta) dbeta[ch] += static_cast<float>(sum_dy);
        if (!dx) continue;
        const double gam = static_cast<double>(pg[ch]);
        if (train) {
          const double scale = gam * inv / static_cast<double>(count);
          for (int b = 0; b < n; ++b) {
            const float* xrow = px + b * batch_stride + ch * chan_stride;
            const float* dyrow = dy + b * batch_stride + ch * chan_stride;
            float* dxrow = dx + b * batch_stride + ch * chan_stride;
            for (int64_t i = 0; i < sp; ++i) {
              const double xhat = (static_cast<double>(xrow[i]) - mu) * inv;
              dxrow[i] += static_cast<float>(
                  scale * (static_cast<double>(count) *
                               static_cast<double>(dyrow[i]) -
                           sum_dy - xhat * sum_dy_xhat));
            }
          }
        } else {
          const double scale = gam * inv;
          for (int b = 0; b < n; ++b) {
            const float* dyrow = dy + b * batch_stride + ch * chan_stride;
            float* dxrow = dx + b * batch_stride + ch * chan_stride;
            for (int64_t i = 0; i < sp; ++i) {
              dxrow[i] += static_cast<float>(scale *
                                             static_cast<double>(dyrow[i]));
            }
          }
        }
      }
    });
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

// ---- Dropout ---------------------------------------------------------------

Var dropout(Var x, float rate, Rng& rng, Mode mode) {
  Graph* g = RESASR_GRAPH_OF(x, "dropout");
  if (rate < 0.0f || rate >= 1.0f) {
    throw Error(strfmt("dropout: rate must be in [0,1), got %g",
                       static_cast<double>(rate)));
  }
  const Tensor& tx = x.value();
  const int64_t n = tx.numel();
  const bool needs = g->needs_grad(x);
  const int xid = x.id_;
  const int yid = g->size();

  if (mode == Mode::kInfer || rate == 0.0f) {
    Tensor y = tx;
    auto backprop = [g, xid, yid, n]() {
      if (!g->node(xid).needs_grad) return;
      const float* dy = g->node(yid).tensor.grad();
      float* dx = g->node(xid).tensor.grad();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
    };
    return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
  }

  const float scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n));
  Tensor y(tx.shape());
  const float* px = tx.data();
  float* py = y.data();
  uint8_t* pm = mask->data();
  // Mask drawn serially so the stream consumed from rng is well defined.
  for (int64_t i = 0; i < n; ++i) {
    const bool keep = rng.next_double() >= static_cast<double>(rate);
    pm[i] = keep ? 1 : 0;
    py[i] = keep ? px[i] * scale : 0.0f;
  }

  auto backprop = [g, xid, yid, mask, scale, n]() {
    if (!g->node(xid).needs_grad) return;
    const float* dy = g->node(yid).tensor.grad();
    float* dx = g->node(xid).tensor.grad();
    const uint8_t* pm = mask->data();
    for (int64_t i = 0; i < n; ++i) {
      if (pm[i]) dx[i] += dy[i] * scale;
    }
  };
  return g->emit(std::move(y), needs, maybe_backprop(needs, std::move(backprop)));
}

// ---- Softmax cross-entropy ---------------------------------------------------

SoftmaxXentResult softmax_xent(Var logits, const std::vector<int>& labels) {
  Graph* g = RESASR_GRAPH_OF(logits, "softmax_xent");
  const Tensor& tl = logits.value();
  if (tl.rank() != 2) {
    throw ShapeError(strfmt("softmax_xent: want rank-2 logits, got %s",
                            tl.shape_str().c_str()));
  }
  const int n = tl.extent(0), k = tl.extent(1);
  if (static_cast<int>(labels.size()) != n) {
    throw Error(strfmt("softmax_xent: %zu labels for %d rows", labels.size(),
                       n));
  }
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw Error(strfmt("softmax_xent: label %d out of range [0,%d)", label,
                         k));
    }
  }

  auto probs = std::make_shared<Tensor>(std::vector<int>{n, k});
  const float* pl = tl.data();
  float* pp = probs->data();
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const float* row = pl + static_cast<int64_t>(i) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0;
    for (int j = 0; j < k; ++j) {
      z += std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
    }
    float* prow = pp + static_cast<int64_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      prow[j] = static_cast<float>(
          std::exp(static_cast<double>(row[j]) - static_cast<double>(mx)) / z);
    }
    const double log_py = static_cast<double>(row[labels[static_cast<size_t>(i)]]) -
                          static_cast<double>(mx) - std::log(z);
    total -= log_py;
  }
  Tensor loss({1});
  loss[0] = static_cast<float>(total / static_cast<double>(n));
  ensure_finite(loss, "softmax_xent");

  const bool needs = g->needs_grad(logits);
  const int lid = logits.id_;
  const int yid = g->size();
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto backprop = [g, lid, yid, probs, labels_copy, n, k]() {
    if (!g->node(lid).needs_grad) return;
    const float upstream = g->node(yid).tensor.grad()[0];
    const float inv_n = upstream / static_cast<float>(n);
    const float* pp = probs->data();
    float* dl = g->node(lid).tensor.grad();
    for (int i = 0; i < n; ++i) {
      const int y = (*labels_copy)[static_cast<size_t>(i)];
      const float* prow = pp + static_cast<int64_t>(i) * k;
      float* drow = dl + static_cast<int64_t>(i) * k;
      for (int j = 0; j < k; ++j) {
        drow[j] += inv_n * (prow[j] - (j == y ? 1.0f : 0.0f));
      }
    }
  };
  Var loss_var =
      g->emit(std::move(loss), needs, maybe_backprop(needs, std::move(backprop)));
  return SoftmaxXentResult{loss_var, *probs};
}

}  // namespace resasr
