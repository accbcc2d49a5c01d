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
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "resasr/common.hpp"
#include "resasr/runconfig.hpp"

using namespace resasr;
namespace fs = std::filesystem;

namespace {

std::string cli_binary() {
  const char* env = std::getenv("RESASR_BIN");
  REQUIRE_MESSAGE(env != nullptr, "RESASR_BIN must point at the resasr binary");
  return env;
}

// Runs the CLI; returns its exit code.
int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = cli_binary() + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (status < 0) return -1;
  return WEXITSTATUS(status);
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: ", path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  os << content;
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "resasr_cli_ws";
    fs::remove_all(root);
    fs::create_directories(root);
  }
  std::string path(const std::string& rel) const {
    return (root / rel).string();
  }
};

std::string training_config(const Workspace& ws, const std::string& mode,
                            int epochs, const std::string& run_dir,
                            uint64_t seed) {
  return strfmt(
      "[run]\n"
      "task = multiclass\n"
      "training_mode = %s\n"
      "\n"
      "[train]\n"
      "learning_rate = 0.001\n"
      "batch_size = 8\n"
      "epochs = %d\n"
      "seed = %llu\n"
      "\n"
      "[paths]\n"
      "manifest = %s\n"
      "run_dir = %s\n",
      mode.c_str(), epochs, static_cast<unsigned long long>(seed),
      ws.path("corpus/manifest.csv").c_str(), ws.path(run_dir).c_str());
}

}  // namespace

TEST_CASE("run config parsing: defaults, overrides, strictness") {
  Workspace ws;
  const std::string path = ws.path("cfg.ini");

  write_file(path,
             "[run]\n"
             "task = binary\n"
             "training_mode = clean\n"
             "[train]\n"
             "learning_rate = 0.01\n"
             "epochs = 3\n"
             "seed = 9\n"
             "freeze_prefixes = stem, block1\n"
             "[paths]\n"
             "manifest = m.csv\n"
             "run_dir = out\n");
  RunConfig rc = parse_run_config(path);
  CHECK(rc.task == "binary");
  CHECK(rc.num_classes() == 2);
  CHECK(rc.training_mode == "clean");
  CHECK(rc.train.learning_rate == doctest::Approx(0.01));
  CHECK(rc.train.fine_tune_learning_rate == doctest::Approx(0.0001));
  CHECK(rc.train.epochs == 3);
  CHECK(rc.train.seed == 9);
  CHECK(rc.train.freeze_prefixes ==
        std::vector<std::string>{"stem", "block1"});
  CHECK(rc.manifest_path == "m.csv");
  CHECK(rc.mels == 40);
  CHECK(rc.frames == 64);

  write_file(path, "[run]\nbogus_key = 1\n");
  CHECK_THROWS_WITH_AS(parse_run_config(path), doctest::Contains(":2:"),
                       ConfigError);
  write_file(path, "[nonsense]\na = 1\n");
  CHECK_THROWS_AS(parse_run_config(path), ConfigError);
  write_file(path, "[train]\nepochs = banana\n");
  CHECK_THROWS_AS(parse_run_config(path), ConfigError);
  write_file(path, "[train]\nbatch_size = 1\n");
  CHECK_THROWS_AS(parse_run_config(path), ConfigError);
  write_file(path, "stray = 1\n");
  CHECK_THROWS_AS(parse_run_config(path), ConfigError);
  CHECK_THROWS_AS(parse_run_config(ws.path("missing.ini")), ConfigError);
}

TEST_CASE("env seed override") {
  Workspace ws;
  const std::string path = ws.path("cfg.ini");
  write_file(path, "[train]\nseed = 5\n");
  RunConfig rc = parse_run_config(path);
  setenv("RESNET_ASR_SEED", "12345", 1);
  apply_env_seed(rc);
  CHECK(rc.train.seed == 12345);
  setenv("RESNET_ASR_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(apply_env_seed(rc), ConfigError);
  unsetenv("RESNET_ASR_SEED");
}

TEST_CASE("cli end to end: synth, train, eval, finetune, compare") {
  Workspace ws;
  const std::string log = ws.path("log.txt");

  SUBCASE("bad usage exits with 2") {
    CHECK(run_cli("synth-corpus --out " + ws.path("x") + " --per-class 0",
                  log) == 2);
    CHECK(run_cli("definitely-not-a-command", log) == 2);
    CHECK(run_cli("synth-corpus", log) == 2);  // missing required flags
  }

  // Small corpus shared by the rest of the flow.
  REQUIRE(run_cli("synth-corpus --out " + ws.path("corpus") +
                      " --per-class 3 --seed 11",
                  log) == 0);
  REQUIRE(fs::exists(ws.path("corpus/manifest.csv")));

  SUBCASE("synth-corpus reruns byte-identically") {
    REQUIRE(run_cli("synth-corpus --out " + ws.path("corpus2") +
                        " --per-class 3 --seed 11",
                    log) == 0);
    CHECK(file_bytes(ws.path("corpus/manifest.csv")) ==
          file_bytes(ws.path("corpus2/manifest.csv")));
  }

  SUBCASE("train, determinism, eval, finetune, compare") {
    write_file(ws.path("train.ini"), training_config(ws, "clean", 2, "run1", 3));
    REQUIRE(run_cli("train --config " + ws.path("train.ini"), log) == 0);
    CHECK(fs::exists(ws.path("run1/history.csv")));
    CHECK(fs::exists(ws.path("run1/checkpoints/epoch_0002.ckpt")));
    const std::string latest = file_bytes(ws.path("run1/checkpoints/latest"));
    CHECK(latest == "epoch_0002.ckpt\n");
    const std::string history = file_bytes(ws.path("run1/history.csv"));
    CHECK(history.rfind("epoch,loss,val_accuracy\n", 0) == 0);

    // Identical config and seed rerun into the same run directory:
    // byte-identical history and checkpoints.
    const std::string first_ckpt =
        file_bytes(ws.path("run1/checkpoints/epoch_0002.ckpt"));
    REQUIRE(run_cli("train --config " + ws.path("train.ini"), log) == 0);
    CHECK(file_bytes(ws.path("run1/history.csv")) == history);
    CHECK(file_bytes(ws.path("run1/checkpoints/epoch_0002.ckpt")) ==
          first_ckpt);

    // Eval the clean-trained model on the full manifest: per-SNR rows must
    // appear in metrics.csv.
    REQUIRE(run_cli("eval --ckpt " + ws.path("run1/checkpoints/epoch_0002.ckpt") +
                        " --manifest " + ws.path("corpus/manifest.csv") +
                        " --out " + ws.path("eval1"),
                    log) == 0);
    const std::string metrics = file_bytes(ws.path("eval1/metrics.csv"));
    CHECK(metrics.find("noisy,subway,") != std::string::npos);
    CHECK(metrics.find("clean,none,,") != std::string::npos);
    CHECK(fs::exists(ws.path("eval1/confusion.svg")));
    CHECK(fs::exists(ws.path("eval1/wer.svg")));

    // Finetune from the checkpoint; a prefix that matches nothing only warns.
    write_file(ws.path("ft.ini"),
               training_config(ws, "multicondition", 1, "run_ft", 3));
    REQUIRE(run_cli("finetune --config " + ws.path("ft.ini") + " --from " +
                        ws.path("run1/checkpoints/epoch_0002.ckpt") +
                        " --freeze stem --freeze nosuchprefix",
                    log) == 0);
    CHECK(fs::exists(ws.path("run_ft/checkpoints/epoch_0001.ckpt")));

    REQUIRE(run_cli("eval --ckpt " +
                        ws.path("run_ft/checkpoints/epoch_0001.ckpt") +
                        " --manifest " + ws.path("corpus/manifest.csv") +
                        " --out " + ws.path("eval_ft"),
                    log) == 0);

    // Compare the two eval outputs.
    REQUIRE(run_cli("compare --runs " + ws.path("eval1") + " " +
                        ws.path("eval_ft") + " --out " + ws.path("cmp"),
                    log) == 0);
    const std::string acc = file_bytes(ws.path("cmp/accuracy.csv"));
    int lines = 0;
    for (char c : acc) lines += c == '\n';
    CHECK(lines == 3);
    CHECK(acc.find("eval1") != std::string::npos);
    CHECK(acc.find("eval_ft") != std::string::npos);
  }

  SUBCASE("eval usage and data errors") {
    write_file(ws.path("empty.csv"), "path,label,mode,noise_type,snr_db\n");
    write_file(ws.path("cfg.ini"), training_config(ws, "clean", 1, "runx", 1));
    REQUIRE(run_cli("train --config " + ws.path("cfg.ini"), log) == 0);
    const std::string ckpt = ws.path("runx/checkpoints/epoch_0001.ckpt");

    CHECK(run_cli("eval --ckpt " + ckpt + " --manifest " + ws.path("empty.csv") +
                      " --out " + ws.path("evalx"),
                  log) == 2);

    // Corrupt checkpoint: data error.
    const std::string broken = ws.path("broken.ckpt");
    std::string bytes = file_bytes(ckpt);
    bytes.resize(bytes.size() / 2);
    std::ofstream os(broken, std::ios::binary | std::ios::trunc);
    os << bytes;
    os.close();
    CHECK(run_cli("eval --ckpt " + broken + " --manifest " +
                      ws.path("corpus/manifest.csv") + " --out " +
                      ws.path("evaly"),
                  log) == 3);
  }

  SUBCASE("binary task: mode becomes the label, confusion is 2x2") {
    write_file(ws.path("bin.ini"),
               strfmt("[run]\n"
                      "task = binary\n"
                      "[train]\n"
                      "batch_size = 8\n"
                      "epochs = 1\n"
                      "seed = 4\n"
                      "[paths]\n"
                      "manifest = %s\n"
                      "run_dir = %s\n",
                      ws.path("corpus/manifest.csv").c_str(),
                      ws.path("run_bin").c_str()));
    REQUIRE(run_cli("train --config " + ws.path("bin.ini"), log) == 0);
    REQUIRE(run_cli("eval --ckpt " +
                        ws.path("run_bin/checkpoints/epoch_0001.ckpt") +
                        " --manifest " + ws.path("corpus/manifest.csv") +
                        " --out " + ws.path("eval_bin"),
                    log) == 0);
    const std::string confusion = file_bytes(ws.path("eval_bin/confusion.csv"));
    CHECK(confusion.rfind("clean,noisy\n", 0) == 0);
    int lines = 0;
    for (char c : confusion) lines += c == '\n';
    CHECK(lines == 3);  // header + 2 rows
  }

  SUBCASE("a lock file blocks concurrent runs on the same directory") {
    write_file(ws.path("lk.ini"), training_config(ws, "clean", 1, "runlk", 2));
    fs::create_directories(ws.path("runlk"));
    write_file(ws.path("runlk/.lock"), "9999\n");
    CHECK(run_cli("train --config " + ws.path("lk.ini"), log) == 3);
    fs::remove(ws.path("runlk/.lock"));
    CHECK(run_cli("train --config " + ws.path("lk.ini"), log) == 0);
  }

  fs::remove_all(ws.root);
}
