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

#include "resasr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "resasr/common.hpp"
#include "resasr/parallel.hpp"

namespace resasr {

namespace {

constexpr uint64_t kShuffleSalt = 0x73687566666c65ULL;
constexpr uint64_t kDropoutSalt = 0x64726f706f7574ULL;

void fisher_yates(std::vector<size_t>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j =
        static_cast<size_t>(rng.next_index(static_cast<int64_t>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

int argmax_row(const float* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;  // ties keep the lowest index
  }
  return best;
}

Tensor gather_batch(const std::vector<Tensor>& features,
                    const std::vector<size_t>& order, size_t lo, size_t hi,
                    int mels, int frames) {
  const int n = static_cast<int>(hi - lo);
  Tensor batch({n, 1, mels, frames});
  const int64_t plane = static_cast<int64_t>(mels) * frames;
  for (size_t i = lo; i < hi; ++i) {
    const Tensor& f = features[order[i]];
    std::copy(f.data(), f.data() + plane,
              batch.data() + static_cast<int64_t>(i - lo) * plane);
  }
  return batch;
}

// Infer-mode accuracy (percent) over the given record indices.
double score_accuracy(const ModelSpec& spec, ParamStore& store,
                      const std::vector<Tensor>& features,
                      const std::vector<int>& labels,
                      const std::vector<size_t>& indices, int batch_size) {
  if (indices.empty()) return 0.0;
  const int mels = spec.input_shape[1];
  const int frames = spec.input_shape[2];
  int64_t correct = 0;
  for (size_t lo = 0; lo < indices.size(); lo += static_cast<size_t>(batch_size)) {
    const size_t hi =
        std::min(indices.size(), lo + static_cast<size_t>(batch_size));
    Tensor batch = gather_batch(features, indices, lo, hi, mels, frames);
    Graph g;
    ForwardResult fwd = forward(spec, store, g, batch, Mode::kInfer);
    const Tensor& logits = fwd.logits.value();
    const int k = logits.extent(1);
    for (size_t i = lo; i < hi; ++i) {
      const float* row = logits.data() + static_cast<int64_t>(i - lo) * k;
      if (argmax_row(row, k) == labels[indices[i]]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(indices.size());
}

std::vector<size_t> pick_val_subset(const std::vector<size_t>& test_indices,
                                    int max_val_records) {
  if (max_val_records <= 0 ||
      static_cast<size_t>(max_val_records) >= test_indices.size()) {
    return test_indices;
  }
  // Evenly strided picks so every class region of the manifest is touched.
  std::vector<size_t> out;
  out.reserve(static_cast<size_t>(max_val_records));
  const double step = static_cast<double>(test_indices.size()) /
                      static_cast<double>(max_val_records);
  for (int i = 0; i < max_val_records; ++i) {
    out.push_back(test_indices[static_cast<size_t>(
        static_cast<double>(i) * step)]);
  }
  return out;
}

}  // namespace

// ---- SGD -----------------------------------------------------------------------

void sgd_step(ParamStore& params, const NamedGrads& grads, float lr) {
  // Validate everything before touching any parameter.
  for (const auto& [name, grad] : grads) {
    const Tensor& p = params.tensor(name);
    if (static_cast<int64_t>(grad->size()) != p.numel()) {
      throw ShapeError(strfmt("sgd_step: gradient size %zu vs parameter %s",
                              grad->size(), p.shape_str().c_str()));
    }
    for (float gv : *grad) {
      if (!std::isfinite(gv)) {
        throw DivergenceError(
            strfmt("sgd_step: non-finite gradient for '%s'", name.c_str()));
      }
    }
  }
  for (const auto& [name, grad] : grads) {
    ParamEntry& entry = params.entry(name);
    if (entry.frozen) continue;
    float* p = entry.tensor.data();
    const float* gp = grad->data();
    const int64_t n = entry.tensor.numel();
    for (int64_t i = 0; i < n; ++i) p[i] -= lr * gp[i];
  }
}

// ---- Dataset preparation ---------------------------------------------------------

PreparedData prepare_training_data(const DatasetManifest& manifest,
                                   const std::string& base_dir, int mels,
                                   int frames) {
  if (manifest.records.empty()) {
    throw DataError("prepare_training_data: empty manifest");
  }
  const size_t n = manifest.records.size();
  std::vector<FeatureMatrix> raw(n);
  std::vector<std::string> errors(n);
  parallel_for(0, static_cast<int64_t>(n), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const auto& r = manifest.records[static_cast<size_t>(i)];
      try {
        const Waveform w = load_wav(resolve_path(base_dir, r.path));
        raw[static_cast<size_t>(i)] = log_mel(w, mels, frames);
      } catch (const std::exception& e) {
        errors[static_cast<size_t>(i)] = e.what();
      }
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }

  PreparedData data;
  data.labels.resize(n);
  for (size_t i = 0; i < n; ++i) {
    data.labels[i] = manifest.records[i].label;
    if (manifest.records[i].split == Split::kTrain) {
      data.train_indices.push_back(i);
    } else {
      data.test_indices.push_back(i);
    }
  }
  if (data.train_indices.empty()) {
    throw DataError("prepare_training_data: no records in the train split");
  }

  std::vector<FeatureMatrix> train_mats;
  train_mats.reserve(data.train_indices.size());
  for (size_t i : data.train_indices) train_mats.push_back(raw[i]);
  data.norm = compute_feature_norm(train_mats);

  data.features.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    FeatureMatrix m = std::move(raw[i]);
    normalize_features(m, data.norm);
    data.features.push_back(feature_tensor(m));
  }
  return data;
}

std::vector<Tensor> prepare_features(const std::vector<UtteranceRecord>& records,
                                     const std::string& base_dir, int mels,
                                     int frames, const FeatureNorm& norm) {
  std::vector<Tensor> out(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(0, static_cast<int64_t>(records.size()),
               [&](int64_t lo, int64_t hi) {
                 for (int64_t i = lo; i < hi; ++i) {
                   const auto& r = records[static_cast<size_t>(i)];
                   try {
                     const Waveform w =
                         load_wav(resolve_path(base_dir, r.path));
                     FeatureMatrix m = log_mel(w, mels, frames);
                     normalize_features(m, norm);
                     out[static_cast<size_t>(i)] = feature_tensor(m);
                   } catch (const std::exception& e) {
                     errors[static_cast<size_t>(i)] = e.what();
                   }
                 }
               });
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }
  return out;
}

void store_feature_norm(ParamStore& store, const FeatureNorm& norm) {
  const int mels = static_cast<int>(norm.mean.size());
  auto set = [&](const std::string& name, const std::vector<float>& v) {
    if (store.contains(name)) {
      store.tensor(name) = Tensor({mels}, v);
    } else {
      store.add(name, Tensor({mels}, v), false);
    }
  };
  set("featnorm.mean", norm.mean);
  set("featnorm.std", norm.std);
}

FeatureNorm feature_norm_from_store(const ParamStore& store) {
  if (!store.contains("featnorm.mean") || !store.contains("featnorm.std")) {
    throw DataError("store carries no feature normalization statistics");
  }
  FeatureNorm norm;
  norm.mean = store.tensor("featnorm.mean").values();
  norm.std = store.tensor("featnorm.std").values();
  return norm;
}

// ---- Training --------------------------------------------------------------------

TrainResult train(const ModelSpec& spec, ParamStore& store,
                  const DatasetManifest& manifest, const std::string& base_dir,
                  const TrainConfig& config, const EpochCallback& per_epoch) {
  if (config.learning_rate <= 0.0f) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (config.batch_size < 2) {
    throw ConfigError("train: batch_size must be >= 2 (batch norm)");
  }
  if (config.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (spec.input_shape[0] != 1) {
    throw ConfigError("train: expected single-channel feature input");
  }
  const int mels = spec.input_shape[1];
  const int frames = spec.input_shape[2];

  PreparedData data = prepare_training_data(manifest, base_dir, mels, frames);
  store_feature_norm(store, data.norm);
  const std::vector<size_t> val_indices =
      pick_val_subset(data.test_indices, config.max_val_records);

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<size_t> order = data.train_indices;
    Rng shuffle_rng(Rng::mix3(config.seed, kShuffleSalt,
                              static_cast<uint64_t>(epoch)));
    fisher_yates(order, shuffle_rng);

    double loss_sum = 0.0;
    int64_t seen = 0;
    int batch_index = 0;
    for (size_t lo = 0; lo < order.size();
         lo += static_cast<size_t>(config.batch_size), ++batch_index) {
      const size_t hi =
          std::min(order.size(), lo + static_cast<size_t>(config.batch_size));
      if (hi - lo < 2) break;  // batch norm cannot run on a single sample
      Tensor batch = gather_batch(data.features, order, lo, hi, mels, frames);
      std::vector<int> labels;
      labels.reserve(hi - lo);
      for (size_t i = lo; i < hi; ++i) labels.push_back(data.labels[order[i]]);

      Rng dropout_rng(Rng::mix3(Rng::mix(config.seed, kDropoutSalt),
                                static_cast<uint64_t>(epoch),
                                static_cast<uint64_t>(batch_index)));
      try {
        Graph g;
        LossResult loss =
            model_loss(spec, store, g, batch, labels, Mode::kTrain,
                       &dropout_rng);
        const double batch_loss =
            static_cast<double>(loss.loss.value()[0]);
        if (!std::isfinite(batch_loss)) {
          throw DivergenceError("train: non-finite loss");
        }
        if (g.needs_grad(loss.loss)) {  // false iff every parameter is frozen
          g.backward(loss.loss);
          NamedGrads grads;
          grads.reserve(loss.params.size());
          for (const auto& [name, var] : loss.params) {
            if (g.needs_grad(var)) grads.emplace_back(name, &g.grad_ref(var));
          }
          sgd_step(store, grads, config.learning_rate);
        }
        loss_sum += batch_loss * static_cast<double>(hi - lo);
        seen += static_cast<int64_t>(hi - lo);
      } catch (const DivergenceError& e) {
        std::fprintf(stderr, "[train] diverged at epoch %d batch %d: %s\n",
                     epoch, batch_index, e.what());
        result.diverged = true;
        return result;
      }
    }
    if (seen == 0) throw DataError("train: train split yields no full batch");

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.val_accuracy = score_accuracy(spec, store, data.features,
                                        data.labels, val_indices,
                                        config.batch_size);
    result.history.push_back(stats);
    if (per_epoch) per_epoch(stats, store);
  }
  return result;
}

TrainResult fine_tune(const ModelSpec& spec, ParamStore& store,
                      const DatasetManifest& manifest,
                      const std::string& base_dir, const TrainConfig& config,
                      const EpochCallback& per_epoch) {
  const int frozen = store.freeze_matching(config.freeze_prefixes);
  if (!config.freeze_prefixes.empty() && frozen == 0) {
    std::fprintf(stderr,
                 "[fine_tune] warning: freeze prefixes matched no tensors\n");
  }
  TrainConfig ft = config;
  ft.learning_rate = config.fine_tune_learning_rate;
  return train(spec, store, manifest, base_dir, ft, per_epoch);
}

// ---- Transfer -------------------------------------------------------------------

int transfer_init(const Checkpoint& source, ParamStore& target,
                  const std::vector<std::pair<std::string, std::string>>&
                      name_map) {
  std::string problems;
  std::vector<std::pair<const Tensor*, Tensor*>> planned;
  for (const auto& [src_name, dst_name] : name_map) {
    const Tensor* src = source.find(src_name);
    if (src == nullptr) {
      problems += strfmt("  missing source tensor '%s'\n", src_name.c_str());
      continue;
    }
    if (!target.contains(dst_name)) {
      problems += strfmt("  missing target tensor '%s'\n", dst_name.c_str());
      continue;
    }
    Tensor& dst = target.tensor(dst_name);
    if (!dst.same_shape(*src)) {
      problems += strfmt("  shape mismatch '%s' %s -> '%s' %s\n",
                         src_name.c_str(), src->shape_str().c_str(),
                         dst_name.c_str(), dst.shape_str().c_str());
      continue;
    }
    planned.emplace_back(src, &dst);
  }
  if (!problems.empty()) {
    throw DataError("transfer_init failed:\n" + problems);
  }
  for (auto& [src, dst] : planned) *dst = *src;
  return static_cast<int>(planned.size());
}

std::vector<std::pair<std::string, std::string>> matching_name_map(
    const Checkpoint& source, const ParamStore& target) {
  std::vector<std::pair<std::string, std::string>> map;
  for (const auto& [name, tensor] : source.tensors) {
    if (target.contains(name)) map.emplace_back(name, name);
  }
  return map;
}

}  // namespace resasr
