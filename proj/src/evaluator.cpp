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

#include "resasr/evaluator.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "resasr/common.hpp"
#include "resasr/trainer.hpp"

namespace fs = std::filesystem;

namespace resasr {

namespace {

int argmax_row(const float* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

std::string condition_snr_field(const ConditionKey& key) {
  return key.snr_db ? std::to_string(*key.snr_db) : std::string();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(strfmt("cannot write '%s'", path.c_str()));
  os << bytes;
  if (!os) throw DataError(strfmt("short write to '%s'", path.c_str()));
}

// Grouped WER bars (clean / noisy per run) as a standalone SVG.
std::string wer_chart_svg(const std::vector<RunSummary>& runs) {
  const int bar_w = 34, gap = 18, group_gap = 40;
  const int plot_h = 220, margin_l = 56, margin_t = 34, margin_b = 58;
  const int group_w = 2 * bar_w + gap;
  const int width = margin_l + 20 +
                    static_cast<int>(runs.size()) * (group_w + group_gap);
  const int height = margin_t + plot_h + margin_b;

  double max_wer = 10.0;
  for (const auto& r : runs) {
    max_wer = std::max(max_wer, 100.0 - r.clean_accuracy_pct());
    max_wer = std::max(max_wer, 100.0 - r.noisy_accuracy_pct());
  }
  max_wer = std::min(100.0, max_wer * 1.15 + 1.0);

  std::string s = strfmt(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n",
      width, height);
  s += strfmt("<text x=\"%d\" y=\"18\" font-family=\"monospace\" "
              "font-size=\"13\">word error rate (%%)</text>\n",
              margin_l);
  // y axis with four ticks
  for (int i = 0; i <= 4; ++i) {
    const double v = max_wer * i / 4.0;
    const int y = margin_t + plot_h - static_cast<int>(plot_h * i / 4.0);
    s += strfmt("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" "
                "stroke=\"#cccccc\"/>\n",
                margin_l, y, width - 10, y);
    s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                "font-size=\"10\" text-anchor=\"end\">%.1f</text>\n",
                margin_l - 6, y + 3, v);
  }
  int x = margin_l + 10;
  for (const auto& r : runs) {
    const double wers[2] = {100.0 - r.clean_accuracy_pct(),
                            100.0 - r.noisy_accuracy_pct()};
    const char* colors[2] = {"#4878a8", "#c44e52"};
    const char* labels[2] = {"clean", "noisy"};
    for (int j = 0; j < 2; ++j) {
      const int h =
          static_cast<int>(plot_h * std::min(wers[j], max_wer) / max_wer);
      const int bx = x + j * (bar_w + gap);
      s += strfmt("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                  "fill=\"%s\"/>\n",
                  bx, margin_t + plot_h - h, bar_w, h, colors[j]);
      s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                  "font-size=\"9\" text-anchor=\"middle\">%.2f</text>\n",
                  bx + bar_w / 2, margin_t + plot_h - h - 4, wers[j]);
      s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                  "font-size=\"9\" text-anchor=\"middle\">%s</text>\n",
                  bx + bar_w / 2, margin_t + plot_h + 14, labels[j]);
    }
    s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                "font-size=\"11\" text-anchor=\"middle\">%s</text>\n",
                x + group_w / 2, margin_t + plot_h + 32, r.name.c_str());
    x += group_w + group_gap;
  }
  s += "</svg>\n";
  return s;
}

std::string confusion_svg(const EvalReport& report) {
  const int k = report.num_classes();
  const int cell = 30, margin_l = 70, margin_t = 70;
  const int width = margin_l + k * cell + 20;
  const int height = margin_t + k * cell + 20;
  int64_t max_count = 1;
  for (int64_t v : report.confusion) max_count = std::max(max_count, v);

  std::string s = strfmt(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n",
      width, height);
  s += strfmt("<text x=\"%d\" y=\"16\" font-family=\"monospace\" "
              "font-size=\"12\">confusion matrix (rows: truth, columns: "
              "prediction)</text>\n",
              8);
  for (int i = 0; i < k; ++i) {
    s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                "font-size=\"10\" text-anchor=\"end\">%s</text>\n",
                margin_l - 6, margin_t + i * cell + cell / 2 + 3,
                report.class_names[static_cast<size_t>(i)].c_str());
    s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                "font-size=\"10\" text-anchor=\"middle\" "
                "transform=\"rotate(-60 %d %d)\">%s</text>\n",
                margin_l + i * cell + cell / 2, margin_t - 8,
                margin_l + i * cell + cell / 2, margin_t - 8,
                report.class_names[static_cast<size_t>(i)].c_str());
  }
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const int64_t v = report.confusion_at(i, j);
      const double frac = static_cast<double>(v) / static_cast<double>(max_count);
      const int shade = 255 - static_cast<int>(205.0 * frac);
      s += strfmt("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                  "fill=\"rgb(%d,%d,255)\" stroke=\"#e0e0e0\"/>\n",
                  margin_l + j * cell, margin_t + i * cell, cell, cell, shade,
                  shade);
      if (v != 0) {
        s += strfmt("<text x=\"%d\" y=\"%d\" font-family=\"monospace\" "
                    "font-size=\"9\" text-anchor=\"middle\" fill=\"%s\">%lld"
                    "</text>\n",
                    margin_l + j * cell + cell / 2,
                    margin_t + i * cell + cell / 2 + 3,
                    frac > 0.6 ? "#ffffff" : "#000000",
                    static_cast<long long>(v));
      }
    }
  }
  s += "</svg>\n";
  return s;
}

}  // namespace

bool ConditionKey::operator<(const ConditionKey& o) const {
  const int m = mode == SampleMode::kClean ? 0 : 1;
  const int om = o.mode == SampleMode::kClean ? 0 : 1;
  if (m != om) return m < om;
  if (noise_type != o.noise_type) {
    return static_cast<int>(noise_type) < static_cast<int>(o.noise_type);
  }
  const int a = snr_db ? *snr_db : 1000;
  const int b = o.snr_db ? *o.snr_db : 1000;
  return a > b;  // higher SNR first, like the usual Aurora tables
}

double wer_pct(const EvalReport& report) { return 100.0 - report.accuracy_pct(); }

EvalReport aggregate(const std::vector<int>& truths,
                     const std::vector<int>& preds,
                     const std::vector<UtteranceRecord>& records,
                     std::vector<std::string> class_names) {
  if (truths.size() != preds.size() || truths.size() != records.size()) {
    throw Error("aggregate: truth/prediction/record sizes differ");
  }
  const int k = static_cast<int>(class_names.size());
  EvalReport report;
  report.class_names = std::move(class_names);
  report.confusion.assign(static_cast<size_t>(k) * k, 0);
  for (size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i], p = preds[i];
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw Error(strfmt("aggregate: class out of range at record %zu", i));
    }
    report.confusion[static_cast<size_t>(t) * k + p] += 1;
    ConditionKey key{records[i].mode, records[i].noise_type, records[i].snr_db};
    ConditionStat& stat = report.conditions[key];
    stat.count += 1;
    report.total += 1;
    if (t == p) {
      stat.correct += 1;
      report.correct += 1;
    }
  }
  return report;
}

EvalReport evaluate(const ModelSpec& spec, ParamStore& store,
                    const std::vector<UtteranceRecord>& records,
                    const std::string& base_dir,
                    std::vector<std::string> class_names, int batch_size) {
  if (records.empty()) throw DataError("evaluate: no records to evaluate");
  if (static_cast<int>(class_names.size()) != spec.num_classes) {
    throw Error("evaluate: class name count does not match the model head");
  }
  const FeatureNorm norm = feature_norm_from_store(store);
  const int mels = spec.input_shape[1];
  const int frames = spec.input_shape[2];
  const std::vector<Tensor> features =
      prepare_features(records, base_dir, mels, frames, norm);

  std::vector<int> truths, preds;
  truths.reserve(records.size());
  preds.reserve(records.size());
  const int64_t plane = static_cast<int64_t>(mels) * frames;
  for (size_t lo = 0; lo < records.size();
       lo += static_cast<size_t>(batch_size)) {
    const size_t hi =
        std::min(records.size(), lo + static_cast<size_t>(batch_size));
    Tensor batch({static_cast<int>(hi - lo), 1, mels, frames});
    for (size_t i = lo; i < hi; ++i) {
      std::copy(features[i].data(), features[i].data() + plane,
                batch.data() + static_cast<int64_t>(i - lo) * plane);
    }
    Graph g;
    ForwardResult fwd = forward(spec, store, g, batch, Mode::kInfer);
    const Tensor& logits = fwd.logits.value();
    for (size_t i = lo; i < hi; ++i) {
      truths.push_back(records[i].label);
      preds.push_back(argmax_row(
          logits.data() + static_cast<int64_t>(i - lo) * spec.num_classes,
          spec.num_classes));
    }
  }
  return aggregate(truths, preds, records, std::move(class_names));
}

void emit_report(const EvalReport& report, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) {
    throw DataError(strfmt("cannot create report directory '%s'",
                           out_dir.c_str()));
  }

  std::string metrics = "mode,noise_type,snr_db,count,correct,accuracy_pct\n";
  for (const auto& [key, stat] : report.conditions) {
    metrics += strfmt("%s,%s,%s,%lld,%lld,%.4f\n",
                      to_string(key.mode).c_str(),
                      to_string(key.noise_type).c_str(),
                      condition_snr_field(key).c_str(),
                      static_cast<long long>(stat.count),
                      static_cast<long long>(stat.correct),
                      stat.accuracy_pct());
  }
  write_file((fs::path(out_dir) / "metrics.csv").string(), metrics);

  std::string confusion;
  for (size_t i = 0; i < report.class_names.size(); ++i) {
    if (i) confusion += ',';
    confusion += report.class_names[i];
  }
  confusion += '\n';
  const int k = report.num_classes();
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (j) confusion += ',';
      confusion += std::to_string(report.confusion_at(i, j));
    }
    confusion += '\n';
  }
  write_file((fs::path(out_dir) / "confusion.csv").string(), confusion);

  write_file((fs::path(out_dir) / "confusion.svg").string(),
             confusion_svg(report));
  write_file((fs::path(out_dir) / "wer.svg").string(),
             wer_chart_svg({summarize(report, "run")}));
}

// ---- Comparison ------------------------------------------------------------------

double RunSummary::accuracy_pct() const {
  return total == 0 ? 0.0
                    : 100.0 * static_cast<double>(correct) /
                          static_cast<double>(total);
}

double RunSummary::clean_accuracy_pct() const {
  return clean_total == 0 ? 0.0
                          : 100.0 * static_cast<double>(clean_correct) /
                                static_cast<double>(clean_total);
}

double RunSummary::noisy_accuracy_pct() const {
  return noisy_total == 0 ? 0.0
                          : 100.0 * static_cast<double>(noisy_correct) /
                                static_cast<double>(noisy_total);
}

RunSummary summarize(const EvalReport& report, std::string name) {
  RunSummary s;
  s.name = std::move(name);
  s.total = report.total;
  s.correct = report.correct;
  for (const auto& [key, stat] : report.conditions) {
    if (key.mode == SampleMode::kClean) {
      s.clean_total += stat.count;
      s.clean_correct += stat.correct;
    } else {
      s.noisy_total += stat.count;
      s.noisy_correct += stat.correct;
    }
  }
  return s;
}

RunSummary read_metrics_csv(const std::string& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw DataError(strfmt("cannot open metrics '%s'", path.c_str()));
  std::string line;
  if (!std::getline(in, line) ||
      (line != "mode,noise_type,snr_db,count,correct,accuracy_pct" &&
       line != "mode,noise_type,snr_db,count,correct,accuracy_pct\r")) {
    throw DataError(strfmt("'%s': not a metrics.csv file", path.c_str()));
  }
  RunSummary s;
  s.name = std::move(name);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string f;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(f);
        f.clear();
      } else if (c != '\r') {
        f += c;
      }
    }
    fields.push_back(f);
    if (fields.size() != 6) {
      throw DataError(strfmt("'%s' line %d: want 6 fields", path.c_str(),
                             lineno));
    }
    int64_t count = 0, correct = 0;
    try {
      count = std::stoll(fields[3]);
      correct = std::stoll(fields[4]);
    } catch (const std::exception&) {
      throw DataError(strfmt("'%s' line %d: bad counts", path.c_str(), lineno));
    }
    s.total += count;
    s.correct += correct;
    if (fields[0] == "clean") {
      s.clean_total += count;
      s.clean_correct += correct;
    } else {
      s.noisy_total += count;
      s.noisy_correct += correct;
    }
  }
  if (s.total == 0) {
    throw DataError(strfmt("'%s': metrics carry no records", path.c_str()));
  }
  return s;
}

void emit_comparison(const std::vector<RunSummary>& runs,
                     const std::string& out_dir) {
  if (runs.empty()) throw DataError("emit_comparison: no runs");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) {
    throw DataError(strfmt("cannot create directory '%s'", out_dir.c_str()));
  }
  std::string acc =
      "run,overall_accuracy_pct,clean_accuracy_pct,noisy_accuracy_pct,"
      "overall_wer_pct\n";
  for (const auto& r : runs) {
    acc += strfmt("%s,%.4f,%.4f,%.4f,%.4f\n", r.name.c_str(),
                  r.accuracy_pct(), r.clean_accuracy_pct(),
                  r.noisy_accuracy_pct(), 100.0 - r.accuracy_pct());
  }
  write_file((fs::path(out_dir) / "accuracy.csv").string(), acc);
  write_file((fs::path(out_dir) / "wer.svg").string(), wer_chart_svg(runs));
}

}  // namespace resasr
