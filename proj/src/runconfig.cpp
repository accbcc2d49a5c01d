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

#include "resasr/runconfig.hpp"

#include <cstdlib>
#include <fstream>

#include "resasr/common.hpp"

namespace resasr {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) {
    --e;
  }
  return s.substr(b, e - b);
}

struct Parser {
  const std::string& path;
  int lineno;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(strfmt("%s:%d: %s", path.c_str(), lineno, msg.c_str()));
  }

  float to_float(const std::string& v, const std::string& key) const {
    try {
      size_t used = 0;
      const float f = std::stof(v, &used);
      if (used != v.size()) fail(strfmt("trailing junk in %s", key.c_str()));
      return f;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail(strfmt("bad number '%s' for %s", v.c_str(), key.c_str()));
    }
  }

  int to_int(const std::string& v, const std::string& key) const {
    try {
      size_t used = 0;
      const int i = std::stoi(v, &used);
      if (used != v.size()) fail(strfmt("trailing junk in %s", key.c_str()));
      return i;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail(strfmt("bad integer '%s' for %s", v.c_str(), key.c_str()));
    }
  }

  uint64_t to_u64(const std::string& v, const std::string& key) const {
    try {
      size_t used = 0;
      const unsigned long long u = std::stoull(v, &used);
      if (used != v.size()) fail(strfmt("trailing junk in %s", key.c_str()));
      return static_cast<uint64_t>(u);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail(strfmt("bad seed '%s' for %s", v.c_str(), key.c_str()));
    }
  }
};

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

}  // namespace

std::vector<std::string> RunConfig::task_class_names() const {
  if (task == "binary") return {"clean", "noisy"};
  return class_names();
}

std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("config.task", task);
  out.emplace_back("config.training_mode", training_mode);
  out.emplace_back("config.arch", arch);
  out.emplace_back("config.learning_rate",
                   strfmt("%g", static_cast<double>(train.learning_rate)));
  out.emplace_back(
      "config.fine_tune_learning_rate",
      strfmt("%g", static_cast<double>(train.fine_tune_learning_rate)));
  out.emplace_back("config.batch_size", std::to_string(train.batch_size));
  out.emplace_back("config.epochs", std::to_string(train.epochs));
  out.emplace_back("config.seed", std::to_string(train.seed));
  out.emplace_back("config.max_val_records",
                   std::to_string(train.max_val_records));
  std::string prefixes;
  for (size_t i = 0; i < train.freeze_prefixes.size(); ++i) {
    if (i) prefixes += ',';
    prefixes += train.freeze_prefixes[i];
  }
  out.emplace_back("config.freeze_prefixes", prefixes);
  out.emplace_back("config.manifest", manifest_path);
  out.emplace_back("config.run_dir", run_dir);
  out.emplace_back("config.mels", std::to_string(mels));
  out.emplace_back("config.frames", std::to_string(frames));
  return out;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(strfmt("cannot open config '%s'", path.c_str()));

  RunConfig config;
  std::string section;
  std::string line;
  Parser p{path, 0};
  while (std::getline(in, line)) {
    ++p.lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') p.fail("unterminated section header");
      section = t.substr(1, t.size() - 2);
      if (section != "run" && section != "train" && section != "paths" &&
          section != "features") {
        p.fail(strfmt("unknown section [%s]", section.c_str()));
      }
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) p.fail("expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) p.fail("key outside any [section]");

    if (section == "run") {
      if (key == "task") {
        if (value != "multiclass" && value != "binary") {
          p.fail(strfmt("task must be multiclass or binary, got '%s'",
                        value.c_str()));
        }
        config.task = value;
      } else if (key == "training_mode") {
        if (value != "clean" && value != "multicondition") {
          p.fail(strfmt("training_mode must be clean or multicondition, got "
                        "'%s'",
                        value.c_str()));
        }
        config.training_mode = value;
      } else if (key == "arch") {
        if (value != "target" && value != "source") {
          p.fail(strfmt("arch must be target or source, got '%s'",
                        value.c_str()));
        }
        config.arch = value;
      } else {
        p.fail(strfmt("unknown key '%s' in [run]", key.c_str()));
      }
    } else if (section == "train") {
      if (key == "learning_rate") {
        config.train.learning_rate = p.to_float(value, key);
      } else if (key == "fine_tune_learning_rate") {
        config.train.fine_tune_learning_rate = p.to_float(value, key);
      } else if (key == "batch_size") {
        config.train.batch_size = p.to_int(value, key);
      } else if (key == "epochs") {
        config.train.epochs = p.to_int(value, key);
      } else if (key == "seed") {
        config.train.seed = p.to_u64(value, key);
      } else if (key == "freeze_prefixes") {
        config.train.freeze_prefixes = split_list(value);
      } else if (key == "max_val_records") {
        config.train.max_val_records = p.to_int(value, key);
      } else {
        p.fail(strfmt("unknown key '%s' in [train]", key.c_str()));
      }
    } else if (section == "paths") {
      if (key == "manifest") {
        config.manifest_path = value;
      } else if (key == "run_dir") {
        config.run_dir = value;
      } else {
        p.fail(strfmt("unknown key '%s' in [paths]", key.c_str()));
      }
    } else {  // features
      if (key == "mels") {
        config.mels = p.to_int(value, key);
      } else if (key == "frames") {
        config.frames = p.to_int(value, key);
      } else {
        p.fail(strfmt("unknown key '%s' in [features]", key.c_str()));
      }
    }
  }

  if (config.train.learning_rate <= 0.0f ||
      config.train.fine_tune_learning_rate <= 0.0f) {
    throw ConfigError(strfmt("%s: learning rates must be positive",
                             path.c_str()));
  }
  if (config.train.batch_size < 2) {
    throw ConfigError(strfmt("%s: batch_size must be >= 2", path.c_str()));
  }
  if (config.train.epochs < 1) {
    throw ConfigError(strfmt("%s: epochs must be >= 1", path.c_str()));
  }
  if (config.mels < 16 || config.frames < 16) {
    throw ConfigError(strfmt("%s: mels and frames must be >= 16 (four pooling "
                             "stages)",
                             path.c_str()));
  }
  return config;
}

void apply_env_seed(RunConfig& config) {
  const char* env = std::getenv("RESNET_ASR_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    size_t used = 0;
    const unsigned long long u = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("junk");
    config.train.seed = static_cast<uint64_t>(u);
  } catch (const std::exception&) {
    throw ConfigError(strfmt("RESNET_ASR_SEED='%s' is not an unsigned integer",
                             env));
  }
}

}  // namespace resasr
