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
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "resasr/common.hpp"
#include "resasr/trainer.hpp"

using namespace resasr;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("resasr_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(),
                     static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

// Small shared corpus for the training tests.
struct TinyCorpus {
  std::string dir;
  DatasetManifest manifest;
  TinyCorpus() {
    dir = fresh_dir("corpus");
    manifest = synth_corpus(dir, 3, 17);
    manifest = split_dataset(manifest, 0.40, 17);
  }
  ~TinyCorpus() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("sgd_step: update rule, zero learning rate, freeze contract") {
  ParamStore store;
  store.add("w", Tensor({2}, {1.0f, -2.0f}));
  store.add("frozen.w", Tensor({1}, {5.0f}));
  store.entry("frozen.w").frozen = true;

  std::vector<float> gw = {2.0f, 4.0f};
  std::vector<float> gf = {100.0f};
  NamedGrads grads = {{"w", &gw}, {"frozen.w", &gf}};

  ParamStore zero_lr = store;
  sgd_step(zero_lr, grads, 0.0f);
  CHECK(tensors_equal(zero_lr.tensor("w"), store.tensor("w")));

  sgd_step(store, grads, 0.001f);
  CHECK(store.tensor("w")[0] == doctest::Approx(0.998).epsilon(1e-7));
  CHECK(store.tensor("w")[1] == doctest::Approx(-2.004).epsilon(1e-7));
  CHECK(store.tensor("frozen.w")[0] == 5.0f);  // nonzero grad, no update
}

TEST_CASE("sgd_step: a non-finite gradient aborts before any update") {
  ParamStore store;
  store.add("a", Tensor({2}, {1.0f, 1.0f}));
  store.add("b", Tensor({1}, {1.0f}));
  std::vector<float> ga = {1.0f, 1.0f};
  std::vector<float> gb = {std::numeric_limits<float>::quiet_NaN()};
  NamedGrads grads = {{"a", &ga}, {"b", &gb}};
  CHECK_THROWS_WITH_AS(sgd_step(store, grads, 0.1f), doctest::Contains("b"),
                       DivergenceError);
  CHECK(store.tensor("a")[0] == 1.0f);  // "a" was not touched either
}

TEST_CASE("small-lr single step descends on >= 95% of seeded trials") {
  int descents = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(Rng::mix(1234, static_cast<uint64_t>(trial)));
    auto [spec, store] = build_target({1, 16, 16}, 4, rng);
    // Give the zero head some signal so the loss landscape is not flat.
    store.tensor("head.weight") = Tensor::he_uniform({128, 4}, 128, rng);
    Tensor batch({4, 1, 16, 16});
    for (int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform(-1, 1);
    std::vector<int> labels = {0, 1, 2, 3};

    const uint64_t mask_seed = rng.next_u64();
    double before, after;
    {
      ParamStore work = store;
      Graph g;
      Rng drop(mask_seed);
      auto loss = model_loss(spec, work, g, batch, labels, Mode::kTrain, &drop);
      before = loss.loss.value()[0];
      g.backward(loss.loss);
      NamedGrads grads;
      for (const auto& [name, var] : loss.params) {
        grads.emplace_back(name, &g.grad_ref(var));
      }
      sgd_step(work, grads, 1e-4f);
      Graph g2;
      Rng drop2(mask_seed);  // identical dropout mask for both evaluations
      auto loss2 =
          model_loss(spec, work, g2, batch, labels, Mode::kTrain, &drop2);
      after = loss2.loss.value()[0];
    }
    if (after <= before) ++descents;
  }
  CHECK(descents >= 95);
}

TEST_CASE("checkpoint: save-load-save is byte identical and lossless") {
  Rng rng(3);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  const std::string dir = fresh_dir("ckpt");
  const std::string p1 = dir + "/a.ckpt";
  const std::string p2 = dir + "/b.ckpt";

  Checkpoint ckpt = make_checkpoint(spec, store);
  ckpt.set_meta("epoch", "7");
  save_checkpoint(ckpt, p1);
  Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));

  CHECK(loaded.tensors.size() == store.size());
  CHECK(loaded.meta("epoch") == "7");
  CHECK(loaded.meta("spec_digest") == spec.digest());
  for (const auto& [name, tensor] : loaded.tensors) {
    CHECK(tensors_equal(tensor, store.tensor(name)));
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: corruption is rejected with clear reasons") {
  Rng rng(4);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  const std::string dir = fresh_dir("corrupt");
  const std::string path = dir + "/c.ckpt";
  save_checkpoint(make_checkpoint(spec, store), path);
  const std::string good = file_bytes(path);

  auto write = [&](const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << bytes;
  };

  write(good.substr(0, good.size() / 3));
  CHECK_THROWS_WITH_AS(load_checkpoint(path),
                       doctest::Contains("truncated payload"), DataError);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write(bad_magic);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                       DataError);

  write(good + "zzz");
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"),
                       DataError);

  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.ckpt"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("restore_into: shape mismatches are rejected, extras are added") {
  Rng rng(5);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  Checkpoint ckpt = make_checkpoint(spec, store);
  ckpt.tensors.emplace_back("featnorm.mean", Tensor({40}));

  ParamStore target = store;
  restore_into(ckpt, target);
  CHECK(target.contains("featnorm.mean"));
  CHECK_FALSE(target.entry("featnorm.mean").trainable);

  Checkpoint bad = make_checkpoint(spec, store);
  bad.tensors[0].second = Tensor({3});
  CHECK_THROWS_AS(restore_into(bad, target), DataError);
}

TEST_CASE("transfer_init: empty map, exact copies, mismatch diagnostics") {
  Rng rng_a(6), rng_b(7);
  auto [spec_a, store_a] = build_target({1, 16, 16}, 4, rng_a);
  auto [spec_b, store_b] = build_target({1, 16, 16}, 4, rng_b);
  Checkpoint src = make_checkpoint(spec_a, store_a);

  CHECK(transfer_init(src, store_b, {}) == 0);

  // Map one conv unit including its batch-norm tensors.
  std::vector<std::pair<std::string, std::string>> map;
  for (const char* suffix : {".weight", ".bias", ".gamma", ".beta",
                             ".running_mean", ".running_var"}) {
    map.emplace_back(std::string("block1.conv1") + suffix,
                     std::string("block1.conv1") + suffix);
  }
  const int moved = transfer_init(src, store_b, map);
  CHECK(moved == 6);
  for (const auto& [from, to] : map) {
    CHECK(tensors_equal(store_b.tensor(to), store_a.tensor(from)));
  }
  // Untouched tensors keep their own initialization.
  CHECK_FALSE(tensors_equal(store_b.tensor("block2.conv1.weight"),
                            store_a.tensor("block2.conv1.weight")));

  // 64-filter conv onto a 128-filter conv: rejected, offender named.
  CHECK_THROWS_WITH_AS(
      transfer_init(src, store_b,
                    {{"block1.conv1.weight", "block2.conv2.weight"}}),
      doctest::Contains("block2.conv2.weight"), DataError);
  CHECK_THROWS_WITH_AS(transfer_init(src, store_b, {{"nope", "head.bias"}}),
                       doctest::Contains("nope"), DataError);
}

TEST_CASE("matching_name_map pairs the intersection by name") {
  Rng rng(8);
  auto [spec, store] = build_target({1, 16, 16}, 4, rng);
  Checkpoint ckpt = make_checkpoint(spec, store);
  ckpt.tensors.emplace_back("not.in.store", Tensor({1}));
  const auto map = matching_name_map(ckpt, store);
  CHECK(map.size() == store.size());
  for (const auto& [a, b] : map) CHECK(a == b);
}

TEST_CASE("feature norm store round trip") {
  ParamStore store;
  FeatureNorm norm;
  norm.mean = {1.0f, 2.0f, 3.0f};
  norm.std = {0.5f, 1.5f, 2.5f};
  store_feature_norm(store, norm);
  FeatureNorm back = feature_norm_from_store(store);
  CHECK(back.mean == norm.mean);
  CHECK(back.std == norm.std);
  // Overwrite path.
  norm.mean = {9.0f, 9.0f, 9.0f};
  store_feature_norm(store, norm);
  CHECK(feature_norm_from_store(store).mean == norm.mean);

  ParamStore empty;
  CHECK_THROWS_AS(feature_norm_from_store(empty), DataError);
}

TEST_CASE("train: config validation and missing-audio errors") {
  TinyCorpus corpus;
  Rng rng(9);
  auto [spec, store] = build_target({1, 40, 64}, 11, rng);

  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(spec, store, corpus.manifest, corpus.dir, cfg),
                  ConfigError);
  cfg.epochs = 1;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train(spec, store, corpus.manifest, corpus.dir, cfg),
                  ConfigError);
  cfg.batch_size = 8;
  cfg.learning_rate = 0.0f;
  CHECK_THROWS_AS(train(spec, store, corpus.manifest, corpus.dir, cfg),
                  ConfigError);

  DatasetManifest broken = corpus.manifest;
  broken.records[0].path = "clean/does_not_exist.wav";
  TrainConfig ok;
  ok.epochs = 1;
  ok.batch_size = 8;
  CHECK_THROWS_AS(train(spec, store, broken, corpus.dir, ok), DataError);
}

TEST_CASE("train: first-epoch loss stays under the uniform baseline bound") {
  TinyCorpus corpus;
  Rng rng(10);
  auto [spec, store] = build_target({1, 40, 64}, 11, rng);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 10;
  TrainResult res = train(spec, store, corpus.manifest, corpus.dir, cfg);
  REQUIRE(res.history.size() == 1);
  CHECK_FALSE(res.diverged);
  CHECK(res.history[0].train_loss <= std::log(11.0) + 0.5);
}

TEST_CASE("train: identical seed and config reproduce bits and history") {
  TinyCorpus corpus;
  auto run = [&](uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x696e6974));
    auto [spec, store] = build_target({1, 40, 64}, 11, rng);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = seed;
    TrainResult res = train(spec, store, corpus.manifest, corpus.dir, cfg);
    return std::make_pair(make_checkpoint(spec, store), res);
  };
  auto [ckpt_a, res_a] = run(77);
  auto [ckpt_b, res_b] = run(77);

  const std::string dir = fresh_dir("det");
  save_checkpoint(ckpt_a, dir + "/a.ckpt");
  save_checkpoint(ckpt_b, dir + "/b.ckpt");
  CHECK(file_bytes(dir + "/a.ckpt") == file_bytes(dir + "/b.ckpt"));
  REQUIRE(res_a.history.size() == res_b.history.size());
  for (size_t i = 0; i < res_a.history.size(); ++i) {
    CHECK(res_a.history[i].train_loss == res_b.history[i].train_loss);
    CHECK(res_a.history[i].val_accuracy == res_b.history[i].val_accuracy);
  }
  fs::remove_all(dir);
}

TEST_CASE("fine_tune: frozen prefixes are bitwise invariant, the rest move") {
  TinyCorpus corpus;
  Rng rng(Rng::mix(5, 0x696e6974));
  auto [spec, store] = build_target({1, 40, 64}, 11, rng);
  const ParamStore before = store;

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.fine_tune_learning_rate = 1e-3f;
  cfg.freeze_prefixes = {"stem", "block1"};
  TrainResult res = fine_tune(spec, store, corpus.manifest, corpus.dir, cfg);
  CHECK_FALSE(res.diverged);

  for (const auto& name : store.names()) {
    if (name.rfind("stem", 0) == 0 || name.rfind("block1", 0) == 0) {
      CHECK(tensors_equal(store.tensor(name), before.tensor(name)));
    }
  }
  CHECK_FALSE(
      tensors_equal(store.tensor("head.weight"), before.tensor("head.weight")));
  CHECK_FALSE(tensors_equal(store.tensor("block2.conv1.weight"),
                            before.tensor("block2.conv1.weight")));
}

TEST_CASE("fine_tune: freezing everything leaves parameters bitwise unchanged") {
  TinyCorpus corpus;
  Rng rng(Rng::mix(6, 0x696e6974));
  auto [spec, store] = build_target({1, 40, 64}, 11, rng);
  const ParamStore before = store;

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 6;
  cfg.freeze_prefixes = {""};  // empty prefix matches every name
  TrainResult res = fine_tune(spec, store, corpus.manifest, corpus.dir, cfg);
  CHECK_FALSE(res.diverged);
  for (const auto& name : before.names()) {
    CHECK(tensors_equal(store.tensor(name), before.tensor(name)));
  }
}

TEST_CASE("train: an exploding learning rate halts with diverged status") {
  TinyCorpus corpus;
  Rng rng(Rng::mix(7, 0x696e6974));
  auto [spec, store] = build_target({1, 40, 64}, 11, rng);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 7;
  cfg.learning_rate = 1e9f;
  TrainResult res = train(spec, store, corpus.manifest, corpus.dir, cfg);
  CHECK(res.diverged);
}
