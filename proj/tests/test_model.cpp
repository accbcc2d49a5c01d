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
#include <cstring>

#include "doctest.h"
#include "resasr/common.hpp"
#include "resasr/gradcheck.hpp"
#include "resasr/model.hpp"
#include "resasr/trainer.hpp"

using namespace resasr;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(),
                     static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

void zero_tensor(ParamStore& store, const std::string& name) {
  Tensor& t = store.tensor(name);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.0f;
}

// Identity 1x1 conv: channel c maps to channel c with weight 1.
void identity_1x1(ParamStore& store, const std::string& name, int channels) {
  Tensor& w = store.tensor(name + ".weight");
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = 0.0f;
  for (int c = 0; c < channels; ++c) w.at({c, c, 0, 0}) = 1.0f;
  zero_tensor(store, name + ".bias");
}

}  // namespace

TEST_CASE("build_target: shape contract on the 1x40x64 default input") {
  Rng rng(1);
  auto [spec, store] = build_target({1, 40, 64}, 11, rng);
  CHECK(store.tensor("dense.weight").shape() == std::vector<int>{2048, 128});
  CHECK(store.tensor("head.weight").shape() == std::vector<int>{128, 11});
  CHECK(store.tensor("stem.conv.weight").shape() ==
        std::vector<int>{64, 1, 3, 3});
  CHECK(store.tensor("block3.conv2.weight").shape() ==
        std::vector<int>{256, 256, 3, 3});
  CHECK(spec.num_classes == 11);
}

TEST_CASE("build_target: rejects inputs that collapse before stage four") {
  Rng rng(2);
  CHECK_THROWS_AS(build_target({1, 8, 8}, 11, rng), ShapeError);
  CHECK_THROWS_AS(build_target({1, 40, 15}, 11, rng), ShapeError);
  CHECK_NOTHROW(build_target({1, 16, 16}, 11, rng));
  CHECK_THROWS_AS(build_target({1, 40, 64}, 1, rng), ShapeError);
}

TEST_CASE("build_source: stage structure and head width") {
  auto [spec, store] = build_source({3, 64, 64});
  int counts[4] = {0, 0, 0, 0};
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::kBottleneck) {
      counts[l.name[5] - '1']++;  // stageN.blockM
    }
  }
  CHECK(counts[0] == 3);
  CHECK(counts[1] == 4);
  CHECK(counts[2] == 6);
  CHECK(counts[3] == 3);
  CHECK(store.tensor("head.weight").shape() == std::vector<int>{2048, 1000});
  CHECK_THROWS_AS(build_source({3, 16, 16}), ShapeError);
}

TEST_CASE("build_source: parameter count exceeds 2e7 on 3x224x224") {
  auto [spec, store] = build_source({3, 224, 224}, 1000);
  CHECK(store.total_parameters() > 20000000);
}

TEST_CASE("forward: spec is shape-sound on a one-sample batch") {
  Rng rng(3);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  Tensor batch = random_tensor({1, 1, 16, 16}, rng);
  Graph g;
  ForwardResult fwd = forward(spec, store, g, batch, Mode::kInfer);
  CHECK(fwd.logits.value().shape() == std::vector<int>{1, 4});
}

TEST_CASE("forward: source model runs at toy scale") {
  Rng rng(4);
  auto [spec, store] = build_source({1, 32, 32}, 5, rng);
  Tensor batch = random_tensor({2, 1, 32, 32}, rng);
  Graph g;
  ForwardResult fwd = forward(spec, store, g, batch, Mode::kInfer);
  CHECK(fwd.logits.value().shape() == std::vector<int>{2, 5});
}

TEST_CASE("source model trains at toy scale") {
  Rng rng(12);
  auto [spec, store] = build_source({1, 32, 32}, 3, rng);
  Tensor batch = random_tensor({2, 1, 32, 32}, rng);
  const std::vector<int> labels = {0, 2};
  const Tensor before = store.tensor("stage2.block1.conv2.weight");

  double first_loss = 0, last_loss = 0;
  for (int step = 0; step < 3; ++step) {
    Graph g;
    auto loss = model_loss(spec, store, g, batch, labels, Mode::kTrain);
    if (step == 0) first_loss = loss.loss.value()[0];
    last_loss = loss.loss.value()[0];
    g.backward(loss.loss);
    NamedGrads grads;
    for (const auto& [name, var] : loss.params) {
      if (g.needs_grad(var)) grads.emplace_back(name, &g.grad_ref(var));
    }
    sgd_step(store, grads, 0.01f);
  }
  CHECK(std::isfinite(last_loss));
  CHECK(first_loss == doctest::Approx(std::log(3.0)).epsilon(1e-4));
  CHECK_FALSE(tensors_equal(store.tensor("stage2.block1.conv2.weight"),
                            before));
}

TEST_CASE("forward: batch shape mismatches are rejected") {
  Rng rng(5);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  Graph g;
  Tensor wrong = random_tensor({1, 1, 16, 32}, rng);
  CHECK_THROWS_AS(forward(spec, store, g, wrong, Mode::kInfer), ShapeError);
  Tensor rank3 = random_tensor({1, 16, 16}, rng);
  CHECK_THROWS_AS(forward(spec, store, g, rank3, Mode::kInfer), ShapeError);
}

TEST_CASE("residual identity: zeroed branch leaves only the shortcut path") {
  // Zero the branch (conv2 weights/bias and its bn offset), make the
  // shortcut an identity 1x1 conv with fresh bn stats, and feed non-negative
  // inputs: the block output must equal the shortcut output bit for bit.
  Rng rng(6);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  const int in_ch[3] = {64, 64, 128};
  const int out_ch[3] = {64, 128, 256};
  for (int bi = 0; bi < 3; ++bi) {
    const std::string name = "block" + std::to_string(bi + 1);
    zero_tensor(store, name + ".conv2.weight");
    zero_tensor(store, name + ".conv2.bias");
    zero_tensor(store, name + ".conv2.beta");
    if (in_ch[bi] == out_ch[bi]) {
      identity_1x1(store, name + ".shortcut", out_ch[bi]);
    }

    Tensor z = random_tensor({2, in_ch[bi], 4, 4}, rng, 0.0f, 1.0f);
    Graph g;
    Var zv = g.leaf(z);
    Var block_out =
        residual_block_forward(g, store, name, zv, Mode::kInfer);

    // Shortcut path recomputed independently with the same tensors.
    Graph g2;
    Var zv2 = g2.leaf(z);
    Var sc = conv2d(zv2, g2.leaf(store.tensor(name + ".shortcut.weight")),
                    g2.leaf(store.tensor(name + ".shortcut.bias")), 1,
                    Padding::kSame);
    Tensor rm = store.tensor(name + ".shortcut.running_mean");
    Tensor rv = store.tensor(name + ".shortcut.running_var");
    sc = batchnorm(sc, g2.leaf(store.tensor(name + ".shortcut.gamma")),
                   g2.leaf(store.tensor(name + ".shortcut.beta")), rm, rv,
                   Mode::kInfer);

    const Tensor& a = block_out.value();
    const Tensor& b = sc.value();
    REQUIRE(a.same_shape(b));
    bool shortcut_nonneg = true;
    for (int64_t i = 0; i < b.numel(); ++i) {
      if (b[i] < 0.0f) shortcut_nonneg = false;
    }
    if (in_ch[bi] == out_ch[bi]) {
      // Identity shortcut of non-negative input stays non-negative, so the
      // block relu changes nothing.
      CHECK(shortcut_nonneg);
      CHECK(std::memcmp(a.data(), b.data(),
                        static_cast<size_t>(a.numel()) * sizeof(float)) == 0);
    } else {
      // Projection changes channel count; compare against relu(shortcut).
      for (int64_t i = 0; i < a.numel(); ++i) {
        const float expected = b[i] > 0.0f ? b[i] : 0.0f;
        CHECK(a[i] == expected);
      }
    }
  }
}

TEST_CASE("infer mode is deterministic; train-mode dropout is not identity") {
  Rng rng(7);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  // The head starts at zero (uniform prediction); give it weight so dropout
  // variation reaches the logits.
  store.tensor("head.weight") = Tensor::he_uniform({128, 4}, 128, rng);
  Tensor batch = random_tensor({2, 1, 16, 16}, rng);

  Graph g1, g2;
  Var l1 = forward(spec, store, g1, batch, Mode::kInfer).logits;
  Var l2 = forward(spec, store, g2, batch, Mode::kInfer).logits;
  CHECK(std::memcmp(l1.value().data(), l2.value().data(),
                    static_cast<size_t>(l1.value().numel()) * sizeof(float)) ==
        0);

  ParamStore store_copy_a = store;
  ParamStore store_copy_b = store;
  Graph g3, g4;
  Rng drop_a(11), drop_b(12);
  Var t1 = forward(spec, store_copy_a, g3, batch, Mode::kTrain, &drop_a).logits;
  Var t2 = forward(spec, store_copy_b, g4, batch, Mode::kTrain, &drop_b).logits;
  CHECK(std::memcmp(t1.value().data(), t2.value().data(),
                    static_cast<size_t>(t1.value().numel()) * sizeof(float)) !=
        0);
}

TEST_CASE("dropout in train mode without an rng is an error") {
  Rng rng(8);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  Tensor batch = random_tensor({2, 1, 16, 16}, rng);
  Graph g;
  CHECK_THROWS_AS(forward(spec, store, g, batch, Mode::kTrain), Error);
}

TEST_CASE("param store: freeze by prefix and total count") {
  Rng rng(9);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  const int frozen = store.freeze_matching({"stem", "block1.conv1"});
  CHECK(frozen > 0);
  CHECK(store.entry("stem.conv.weight").frozen);
  CHECK(store.entry("block1.conv1.gamma").frozen);
  CHECK_FALSE(store.entry("block1.conv2.weight").frozen);
  store.unfreeze_all();
  CHECK_FALSE(store.entry("stem.conv.weight").frozen);

  CHECK(store.total_parameters() > 0);
  CHECK_THROWS_AS(store.tensor("nope"), Error);
  CHECK_THROWS_AS(store.add("stem.conv.weight", Tensor({1})), Error);
}

TEST_CASE("model digests separate architectures and inputs") {
  Rng rng(10);
  auto [spec_a, sa] = build_target({1, 16, 16}, 4, rng);
  auto [spec_b, sb] = build_target({1, 16, 16}, 11, rng);
  auto [spec_c, sc] = build_target({1, 32, 16}, 4, rng);
  CHECK(spec_a.digest() != spec_b.digest());
  CHECK(spec_a.digest() != spec_c.digest());
  Rng rng2(99);
  auto [spec_d, sd] = build_target({1, 16, 16}, 4, rng2);
  CHECK(spec_a.digest() == spec_d.digest());  // weights do not enter the digest
}

TEST_CASE("full target-model loss passes the gradient oracle per tensor") {
  Rng rng(11);
  auto [spec, base_store] = build_target({1, 16, 16}, 4, rng);
  Tensor batch = random_tensor({2, 1, 16, 16}, rng);
  const std::vector<int> labels = {1, 3};

  // Analytic gradients, one backward over the whole model.
  ParamStore grad_store = base_store;
  Graph g;
  Rng drop(21);
  LossResult loss =
      model_loss(spec, grad_store, g, batch, labels, Mode::kTrain, &drop);
  g.backward(loss.loss);

  // Tensors like a conv bias feeding batch norm legitimately have a ~zero
  // gradient; normalize those against the model-wide gradient scale.
  double model_scale = 0.0;
  for (const auto& [name, var] : loss.params) {
    for (float v : g.grad_ref(var)) {
      model_scale = std::max(model_scale, static_cast<double>(std::fabs(v)));
    }
  }

  for (const auto& [name, var] : loss.params) {
    const Tensor analytic(base_store.tensor(name).shape(), g.grad_ref(var));
    auto f = [&](const Tensor& probe) {
      ParamStore probe_store = base_store;
      probe_store.tensor(name) = probe;
      Graph pg;
      Rng pdrop(21);  // identical dropout mask on every probe
      LossResult pl = model_loss(spec, probe_store, pg, batch, labels,
                                 Mode::kTrain, &pdrop);
      return static_cast<double>(pl.loss.value()[0]);
    };
    auto report = grad_check_fd(f, base_store.tensor(name), analytic, 1e-3,
                                3e-4, 8, 17, model_scale);
    INFO("tensor ", name, " rel err ", report.max_rel_err);
    CHECK(report.pass);
  }
}
