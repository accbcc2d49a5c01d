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

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resasr/checkpoint.hpp"
#include "resasr/common.hpp"
#include "resasr/corpus.hpp"
#include "resasr/evaluator.hpp"
#include "resasr/model.hpp"
#include "resasr/runconfig.hpp"
#include "resasr/trainer.hpp"

namespace fs = std::filesystem;
using namespace resasr;

namespace {

constexpr uint64_t kInitSalt = 0x696e6974ULL;  // model initialization stream

// Exclusive lock file guarding a run directory against concurrent runs.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir)
      : path_((fs::path(run_dir) / ".lock").string()) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw DataError(strfmt(
          "run directory '%s' is locked by another invocation (%s exists)",
          run_dir.c_str(), path_.c_str()));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd, pid.data(), pid.size());
    ::close(fd);
    held_ = true;
  }
  ~RunLock() {
    if (held_) ::unlink(path_.c_str());
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
  bool held_ = false;
};

std::pair<ModelSpec, ParamStore> build_arch(const std::string& arch,
                                            std::array<int, 3> input,
                                            int num_classes, Rng& rng) {
  if (arch == "source") return build_source(input, num_classes, rng);
  return build_target(input, num_classes, rng);
}

DatasetManifest drop_noisy_training_rows(const DatasetManifest& manifest) {
  DatasetManifest out;
  for (const auto& r : manifest.records) {
    if (r.split == Split::kTrain && r.mode == SampleMode::kNoisy) continue;
    out.records.push_back(r);
  }
  return out;
}

int run_synth(const std::string& out_dir, int per_class, uint64_t seed) {
  if (per_class < 1) throw ConfigError("--per-class must be >= 1");
  const DatasetManifest manifest = synth_corpus(out_dir, per_class, seed);
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.csv").string();
  std::printf("wrote %zu wav files under %s\n", manifest.records.size(),
              out_dir.c_str());
  std::printf("manifest: %s\n", manifest_path.c_str());
  return 0;
}

int run_train_like(const std::string& kind, const std::string& config_path,
                   const std::string& from_ckpt,
                   const std::vector<std::string>& extra_freeze) {
  RunConfig rc = parse_run_config(config_path);
  apply_env_seed(rc);
  if (kind == "pretrain") rc.training_mode = "clean";
  for (const auto& f : extra_freeze) rc.train.freeze_prefixes.push_back(f);
  if (rc.manifest_path.empty()) {
    throw ConfigError(strfmt("%s: [paths] manifest is required",
                             config_path.c_str()));
  }
  if (rc.run_dir.empty()) {
    throw ConfigError(strfmt("%s: [paths] run_dir is required",
                             config_path.c_str()));
  }

  DatasetManifest manifest = parse_manifest(rc.manifest_path);
  const std::string base_dir = manifest_dir(rc.manifest_path);
  if (rc.task == "binary") manifest = relabel_for_binary(manifest);
  manifest = split_dataset(manifest, 0.40, rc.train.seed);
  if (rc.training_mode == "clean") {
    manifest = drop_noisy_training_rows(manifest);
  }

  Rng init_rng(Rng::mix(rc.train.seed, kInitSalt));
  auto [spec, store] =
      build_arch(rc.arch, {1, rc.mels, rc.frames}, rc.num_classes(), init_rng);

  if (kind == "finetune") {
    const Checkpoint src = load_checkpoint(from_ckpt);
    if (src.meta("spec_digest") != spec.digest()) {
      std::fprintf(stderr,
                   "[finetune] note: checkpoint digest differs from the "
                   "configured architecture; transferring matching tensors\n");
    }
    const auto map = matching_name_map(src, store);
    const int moved = transfer_init(src, store, map);
    std::printf("transferred %d tensors from %s\n", moved, from_ckpt.c_str());
  }

  const fs::path run_dir(rc.run_dir);
  std::error_code ec;
  fs::create_directories(run_dir / "checkpoints", ec);
  if (!fs::is_directory(run_dir / "checkpoints")) {
    throw DataError(strfmt("cannot create run directory '%s'",
                           rc.run_dir.c_str()));
  }
  RunLock lock(rc.run_dir);

  std::ofstream history((run_dir / "history.csv").string(),
                        std::ios::binary | std::ios::trunc);
  if (!history) {
    throw DataError(strfmt("cannot write history under '%s'",
                           rc.run_dir.c_str()));
  }
  history << "epoch,loss,val_accuracy\n";
  history.flush();

  const ModelSpec& spec_ref = spec;
  auto save_epoch = [&](const EpochStats& stats, const ParamStore& snapshot) {
    history << strfmt("%d,%.6f,%.4f\n", stats.epoch, stats.train_loss,
                      stats.val_accuracy);
    history.flush();
    Checkpoint ckpt = make_checkpoint(spec_ref, snapshot);
    ckpt.set_meta("epoch", std::to_string(stats.epoch));
    ckpt.set_meta("seed", std::to_string(rc.train.seed));
    ckpt.set_meta("task", rc.task);
    ckpt.set_meta("training_mode", rc.training_mode);
    ckpt.set_meta("kind", kind);
    for (const auto& [k, v] : rc.echo()) ckpt.set_meta(k, v);
    const std::string name = strfmt("epoch_%04d.ckpt", stats.epoch);
    save_checkpoint(ckpt, (run_dir / "checkpoints" / name).string());
    std::ofstream latest((run_dir / "checkpoints" / "latest").string(),
                         std::ios::binary | std::ios::trunc);
    latest << name << "\n";
  };

  TrainResult result;
  if (kind == "finetune") {
    result = fine_tune(spec, store, manifest, base_dir, rc.train, save_epoch);
  } else {
    result = train(spec, store, manifest, base_dir, rc.train, save_epoch);
  }
  for (const auto& s : result.history) {
    std::printf("epoch %3d  loss %.6f  val_accuracy %.4f%%\n", s.epoch,
                s.train_loss, s.val_accuracy);
  }
  if (result.diverged) {
    std::fprintf(stderr,
                 "training diverged; last good checkpoint is under %s\n",
                 (run_dir / "checkpoints").string().c_str());
    return 4;
  }
  std::printf("done; checkpoints under %s\n",
              (run_dir / "checkpoints").string().c_str());
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& out_dir, bool eval_all) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::string arch = ckpt.meta("arch");
  if (arch.empty() || ckpt.meta("num_classes").empty()) {
    throw DataError(strfmt("'%s' carries no architecture metadata",
                           ckpt_path.c_str()));
  }
  const int num_classes = std::stoi(ckpt.meta("num_classes"));
  const std::array<int, 3> input = {std::stoi(ckpt.meta("input_channels")),
                                    std::stoi(ckpt.meta("input_height")),
                                    std::stoi(ckpt.meta("input_width"))};
  Rng rng(0);
  auto [spec, store] = build_arch(arch, input, num_classes, rng);
  if (ckpt.meta("spec_digest") != spec.digest()) {
    throw DataError(strfmt(
        "'%s': spec digest %s does not match the rebuilt architecture (%s)",
        ckpt_path.c_str(), ckpt.meta("spec_digest").c_str(),
        spec.digest().c_str()));
  }
  restore_into(ckpt, store);

  DatasetManifest manifest = parse_manifest(manifest_path);
  if (manifest.records.empty()) {
    throw ConfigError(strfmt("'%s' lists no records", manifest_path.c_str()));
  }
  const std::string task = ckpt.meta("task");
  if (task == "binary") manifest = relabel_for_binary(manifest);

  std::vector<UtteranceRecord> records;
  if (eval_all) {
    records = manifest.records;
  } else {
    uint64_t seed = 0;
    if (!ckpt.meta("seed").empty()) seed = std::stoull(ckpt.meta("seed"));
    const DatasetManifest split = split_dataset(manifest, 0.40, seed);
    for (const auto& r : split.records) {
      if (r.split == Split::kTest) records.push_back(r);
    }
  }
  if (records.empty()) {
    throw ConfigError("no records selected for evaluation");
  }

  std::vector<std::string> names =
      task == "binary" ? std::vector<std::string>{"clean", "noisy"}
                       : class_names();
  EvalReport report = evaluate(spec, store, records,
                               manifest_dir(manifest_path), names);
  emit_report(report, out_dir);

  std::printf("evaluated %lld utterances\n",
              static_cast<long long>(report.total));
  std::printf("overall accuracy %.4f%%  wer %.4f%%\n", report.accuracy_pct(),
              wer_pct(report));
  for (const auto& [key, stat] : report.conditions) {
    std::printf("  %-6s %-11s %4s dB  n=%-5lld acc %.4f%%\n",
                to_string(key.mode).c_str(), to_string(key.noise_type).c_str(),
                key.snr_db ? std::to_string(*key.snr_db).c_str() : "-",
                static_cast<long long>(stat.count), stat.accuracy_pct());
  }
  std::printf("reports written to %s\n", out_dir.c_str());
  return 0;
}

int run_compare(const std::vector<std::string>& run_dirs,
                const std::string& out_dir) {
  std::vector<RunSummary> runs;
  for (const auto& dir : run_dirs) {
    std::string name = fs::path(dir).filename().string();
    if (name.empty()) name = dir;
    runs.push_back(
        read_metrics_csv((fs::path(dir) / "metrics.csv").string(), name));
  }
  emit_comparison(runs, out_dir);
  std::printf("%-24s %10s %10s %10s %8s\n", "run", "overall%", "clean%",
              "noisy%", "wer%");
  for (const auto& r : runs) {
    std::printf("%-24s %10.4f %10.4f %10.4f %8.4f\n", r.name.c_str(),
                r.accuracy_pct(), r.clean_accuracy_pct(),
                r.noisy_accuracy_pct(), 100.0 - r.accuracy_pct());
  }
  std::printf("comparison written to %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "resasr: deterministic residual-network training lab for isolated-digit "
      "speech in clean and noisy conditions"};
  app.require_subcommand(1);

  // synth-corpus
  std::string synth_out;
  int per_class = 0;
  uint64_t synth_seed = 0;
  auto* sc_synth = app.add_subcommand(
      "synth-corpus", "Generate the synthetic digit corpus with noisy mixes");
  sc_synth->add_option("--out", synth_out, "output directory")->required();
  sc_synth->add_option("--per-class", per_class,
                       "clean tokens per class (the noisy set matches)")
      ->required();
  sc_synth->add_option("--seed", synth_seed, "generator seed");

  // train / pretrain
  std::string train_config, pretrain_config;
  auto* sc_train =
      app.add_subcommand("train", "Train a model from a run config");
  sc_train->add_option("--config", train_config, "run config file")->required();
  auto* sc_pretrain = app.add_subcommand(
      "pretrain", "Train a transfer source on clean data (training_mode is "
                  "forced to clean)");
  sc_pretrain->add_option("--config", pretrain_config, "run config file")
      ->required();

  // finetune
  std::string ft_config, ft_from;
  std::vector<std::string> ft_freeze;
  auto* sc_finetune = app.add_subcommand(
      "finetune",
      "Initialize from a checkpoint, freeze prefixes, train at the fine-tune "
      "learning rate");
  sc_finetune->add_option("--config", ft_config, "run config file")->required();
  sc_finetune->add_option("--from", ft_from, "source checkpoint")->required();
  sc_finetune->add_option("--freeze", ft_freeze,
                          "layer-path prefix to freeze (repeatable)");

  // eval
  std::string eval_ckpt, eval_manifest, eval_out;
  bool eval_all = false;
  auto* sc_eval =
      app.add_subcommand("eval", "Evaluate a checkpoint and emit reports");
  sc_eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  sc_eval->add_option("--manifest", eval_manifest, "manifest file")->required();
  sc_eval->add_option("--out", eval_out, "report directory")->required();
  sc_eval->add_flag("--all", eval_all,
                    "evaluate every record instead of the held-out split");

  // compare
  std::vector<std::string> cmp_runs;
  std::string cmp_out;
  auto* sc_compare = app.add_subcommand(
      "compare", "Merge several eval reports into one table and WER chart");
  sc_compare->add_option("--runs", cmp_runs, "eval output directories")
      ->required()
      ->expected(-1);
  sc_compare->add_option("--out", cmp_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sc_synth->parsed()) return run_synth(synth_out, per_class, synth_seed);
    if (sc_train->parsed()) return run_train_like("train", train_config, "", {});
    if (sc_pretrain->parsed()) {
      return run_train_like("pretrain", pretrain_config, "", {});
    }
    if (sc_finetune->parsed()) {
      return run_train_like("finetune", ft_config, ft_from, ft_freeze);
    }
    if (sc_eval->parsed()) {
      return run_eval(eval_ckpt, eval_manifest, eval_out, eval_all);
    }
    if (sc_compare->parsed()) return run_compare(cmp_runs, cmp_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
