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
#include <string>
#include <utility>
#include <vector>

#include "resasr/audio.hpp"
#include "resasr/checkpoint.hpp"
#include "resasr/corpus.hpp"
#include "resasr/model.hpp"

namespace resasr {

struct TrainConfig {
  float learning_rate = 0.001f;
  float fine_tune_learning_rate = 0.0001f;
  int batch_size = 32;
  int epochs = 30;
  uint64_t seed = 0;
  std::vector<std::string> freeze_prefixes;
  // Held-out records scored per epoch; 0 means the whole test split.
  int max_val_records = 0;
};

struct EpochStats {
  int epoch = 0;            // 1-based
  double train_loss = 0.0;  // sample-weighted mean over the epoch's batches
  double val_accuracy = 0.0;  // percent on the held-out subset
};

struct TrainResult {
  std::vector<EpochStats> history;
  bool diverged = false;
};

/// Gradient views by parameter name, borrowed from graph leaves.
using NamedGrads =
    std::vector<std::pair<std::string, const std::vector<float>*>>;

// One plain SGD update: p <- p - lr * g for every unfrozen parameter.
// Validates all gradients first; a non-finite gradient aborts the whole
// step with a DivergenceError naming the tensor.
void sgd_step(ParamStore& params, const NamedGrads& grads, float lr);

// ---- Dataset preparation -----------------------------------------------------

struct PreparedData {
  std::vector<Tensor> features;  // normalized (1, mels, frames) per record
  std::vector<int> labels;
  std::vector<size_t> train_indices;
  std::vector<size_t> test_indices;
  FeatureNorm norm;  // computed on the training split only
};

/// Extracts features for every record, normalizing with statistics from the
/// training split. Paths resolve against base_dir.
PreparedData prepare_training_data(const DatasetManifest& manifest,
                                   const std::string& base_dir, int mels,
                                   int frames);

/// Feature tensors normalized with externally supplied statistics (the
/// checkpoint's, when evaluating).
std::vector<Tensor> prepare_features(const std::vector<UtteranceRecord>& records,
                                     const std::string& base_dir, int mels,
                                     int frames, const FeatureNorm& norm);

/// Stores featnorm.mean / featnorm.std as non-trainable state.
void store_feature_norm(ParamStore& store, const FeatureNorm& norm);
/// Reads them back; DataError when absent.
FeatureNorm feature_norm_from_store(const ParamStore& store);

// ---- Training loops ------------------------------------------------------------

using EpochCallback =
    std::function<void(const EpochStats&, const ParamStore&)>;

// Seeded-shuffle mini-batch SGD over the manifest's train split, scoring the
// held-out split each epoch. Fully deterministic under (seed, config,
// manifest). A non-finite loss or gradient stops training early with
// diverged = true; parameters keep their last good values.
TrainResult train(const ModelSpec& spec, ParamStore& store,
                  const DatasetManifest& manifest, const std::string& base_dir,
                  const TrainConfig& config,
                  const EpochCallback& per_epoch = {});

// train() at the fine-tune learning rate with freeze_prefixes applied.
// Frozen tensors are bitwise invariant across the run. Prefixes that match
// nothing produce a warning on stderr and training proceeds.
TrainResult fine_tune(const ModelSpec& spec, ParamStore& store,
                      const DatasetManifest& manifest,
                      const std::string& base_dir, const TrainConfig& config,
                      const EpochCallback& per_epoch = {});

// ---- Transfer ------------------------------------------------------------------

// Copies source-checkpoint tensors onto target-store tensors following
// (source name -> target name) pairs. Every mapping is validated before any
// copy; missing names or shape mismatches raise a DataError listing all
// offenders. Returns the number of tensors copied.
int transfer_init(const Checkpoint& source, ParamStore& target,
                  const std::vector<std::pair<std::string, std::string>>&
                      name_map);

/// Identity map over every checkpoint tensor whose name exists in the store.
std::vector<std::pair<std::string, std::string>> matching_name_map(
    const Checkpoint& source, const ParamStore& target);

}  // namespace resasr
