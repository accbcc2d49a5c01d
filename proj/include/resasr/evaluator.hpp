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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "resasr/corpus.hpp"
#include "resasr/model.hpp"

namespace resasr {

// One evaluation condition: clean, or (noise scenario, SNR).
struct ConditionKey {
  SampleMode mode = SampleMode::kClean;
  NoiseType noise_type = NoiseType::kNone;
  std::optional<int> snr_db;

  bool operator<(const ConditionKey& o) const;
};

struct ConditionStat {
  int64_t count = 0;
  int64_t correct = 0;
  double accuracy_pct() const {
    return count == 0 ? 0.0
                      : 100.0 * static_cast<double>(correct) /
                            static_cast<double>(count);
  }
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<int64_t> confusion;  // K x K, rows = truth, columns = prediction
  std::map<ConditionKey, ConditionStat> conditions;
  int64_t total = 0;
  int64_t correct = 0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int64_t confusion_at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * class_names.size() +
                     static_cast<size_t>(pred)];
  }
  double accuracy_pct() const {
    return total == 0 ? 0.0
                      : 100.0 * static_cast<double>(correct) /
                            static_cast<double>(total);
  }
};

/// Word error rate of an isolated-word report: substitutions are the only
/// possible error, so this is exactly 100 - accuracy.
double wer_pct(const EvalReport& report);

/// Pure aggregation from prediction/truth pairs; the oracle path for tests.
EvalReport aggregate(const std::vector<int>& truths,
                     const std::vector<int>& preds,
                     const std::vector<UtteranceRecord>& records,
                     std::vector<std::string> class_names);

// Infer-mode evaluation over the given records (manifest order). Feature
// normalization statistics are read from the store, i.e. the checkpoint's
// training statistics. Predictions take the lowest class index on ties.
EvalReport evaluate(const ModelSpec& spec, ParamStore& store,
                    const std::vector<UtteranceRecord>& records,
                    const std::string& base_dir,
                    std::vector<std::string> class_names, int batch_size = 32);

// Writes metrics.csv, confusion.csv, confusion.svg and wer.svg into out_dir.
// Byte-deterministic for a fixed report.
void emit_report(const EvalReport& report, const std::string& out_dir);

// ---- Run comparison ------------------------------------------------------------

struct RunSummary {
  std::string name;
  int64_t total = 0, correct = 0;
  int64_t clean_total = 0, clean_correct = 0;
  int64_t noisy_total = 0, noisy_correct = 0;

  double accuracy_pct() const;
  double clean_accuracy_pct() const;
  double noisy_accuracy_pct() const;
};

RunSummary summarize(const EvalReport& report, std::string name);

/// Rebuilds a summary from an emitted metrics.csv.
RunSummary read_metrics_csv(const std::string& path, std::string name);

/// accuracy.csv plus a grouped WER bar chart, one group per run.
void emit_comparison(const std::vector<RunSummary>& runs,
                     const std::string& out_dir);

}  // namespace resasr
