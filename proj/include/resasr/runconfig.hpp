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

#include <string>
#include <utility>
#include <vector>

#include "resasr/trainer.hpp"

namespace resasr {

// Run description parsed from a flat sectioned key=value file:
//
//   [run]       task, training_mode, arch
//   [train]     learning_rate, fine_tune_learning_rate, batch_size, epochs,
//               seed, freeze_prefixes (comma list), max_val_records
//   [paths]     manifest, run_dir
//   [features]  mels, frames
//
// Unknown sections or keys are rejected with file/line diagnostics.
struct RunConfig {
  TrainConfig train;
  std::string task = "multiclass";              // multiclass | binary
  std::string training_mode = "multicondition";  // clean | multicondition
  std::string arch = "target";                   // target | source
  std::string manifest_path;
  std::string run_dir;
  int mels = kNumMels;
  int frames = kNumFrames;

  int num_classes() const { return task == "binary" ? 2 : kNumClasses; }
  std::vector<std::string> task_class_names() const;

  /// Key/value echo of every field, for checkpoint metadata.
  std::vector<std::pair<std::string, std::string>> echo() const;
};

RunConfig parse_run_config(const std::string& path);

/// RESNET_ASR_SEED, when set, overrides the configured seed.
void apply_env_seed(RunConfig& config);

}  // namespace resasr
