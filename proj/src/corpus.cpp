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

#include "resasr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "resasr/common.hpp"

namespace fs = std::filesystem;

namespace resasr {

namespace {

constexpr double kPi = 3.14159265358979323846;

double mean_square(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return s / static_cast<double>(v.size());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

void validate_record(const UtteranceRecord& r, const std::string& where) {
  if (r.label < 0 || r.label >= kNumClasses) {
    throw DataError(strfmt("%s: label %d out of range [0,%d)", where.c_str(),
                           r.label, kNumClasses));
  }
  const bool clean = r.mode == SampleMode::kClean;
  if (clean != (r.noise_type == NoiseType::kNone) ||
      clean != !r.snr_db.has_value()) {
    throw DataError(strfmt(
        "%s: clean mode, noise type and snr must agree", where.c_str()));
  }
  if (r.snr_db) {
    const auto& ok = allowed_snrs();
    if (std::find(ok.begin(), ok.end(), *r.snr_db) == ok.end()) {
      throw DataError(strfmt("%s: snr %d dB not in the supported set",
                             where.c_str(), *r.snr_db));
    }
  }
}

// Deterministic in-place Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_index(static_cast<int64_t>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {
      "one", "two",   "three", "four", "five", "six",
      "seven", "eight", "nine",  "zero", "oh"};
  return names;
}

std::string class_name(int label) {
  if (label < 0 || label >= kNumClasses) {
    throw DataError(strfmt("label %d out of range", label));
  }
  return class_names()[static_cast<size_t>(label)];
}

std::string to_string(SampleMode mode) {
  return mode == SampleMode::kClean ? "clean" : "noisy";
}

std::string to_string(NoiseType type) {
  switch (type) {
    case NoiseType::kNone: return "none";
    case NoiseType::kSubway: return "subway";
    case NoiseType::kBabble: return "babble";
    case NoiseType::kCar: return "car";
    case NoiseType::kExhibition: return "exhibition";
  }
  return "none";
}

SampleMode mode_from_string(const std::string& s) {
  if (s == "clean") return SampleMode::kClean;
  if (s == "noisy") return SampleMode::kNoisy;
  throw DataError(strfmt("unknown mode '%s'", s.c_str()));
}

NoiseType noise_from_string(const std::string& s) {
  if (s == "none") return NoiseType::kNone;
  if (s == "subway") return NoiseType::kSubway;
  if (s == "babble") return NoiseType::kBabble;
  if (s == "car") return NoiseType::kCar;
  if (s == "exhibition") return NoiseType::kExhibition;
  throw DataError(strfmt("unknown noise type '%s'", s.c_str()));
}

const std::vector<int>& training_snrs() {
  static const std::vector<int> snrs = {20, 15, 10, 5};
  return snrs;
}

const std::vector<int>& allowed_snrs() {
  static const std::vector<int> snrs = {20, 15, 10, 5, -5};
  return snrs;
}

// ---- Manifest CSV ------------------------------------------------------------

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::string out = "path,label,mode,noise_type,snr_db\n";
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    validate_record(r, strfmt("manifest record %zu", i));
    out += r.path;
    out += ',';
    out += std::to_string(r.label);
    out += ',';
    out += to_string(r.mode);
    out += ',';
    out += to_string(r.noise_type);
    out += ',';
    if (r.snr_db) out += std::to_string(*r.snr_db);
    out += '\n';
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(strfmt("cannot write manifest '%s'", path.c_str()));
  os << out;
  if (!os) throw DataError(strfmt("short write to '%s'", path.c_str()));
}

DatasetManifest parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(strfmt("cannot open manifest '%s'", path.c_str()));
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(strfmt("'%s': empty manifest", path.c_str()));
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,mode,noise_type,snr_db") {
    throw DataError(strfmt("'%s' line 1: bad header '%s'", path.c_str(),
                           line.c_str()));
  }
  DatasetManifest manifest;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw DataError(strfmt("'%s' line %d: want 5 fields, got %zu",
                             path.c_str(), lineno, fields.size()));
    }
    UtteranceRecord r;
    r.path = fields[0];
    try {
      r.label = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw DataError(strfmt("'%s' line %d: bad label '%s'", path.c_str(),
                             lineno, fields[1].c_str()));
    }
    try {
      r.mode = mode_from_string(fields[2]);
      r.noise_type = noise_from_string(fields[3]);
    } catch (const DataError& e) {
      throw DataError(strfmt("'%s' line %d: %s", path.c_str(), lineno,
                             e.what()));
    }
    if (!fields[4].empty()) {
      try {
        r.snr_db = std::stoi(fields[4]);
      } catch (const std::exception&) {
        throw DataError(strfmt("'%s' line %d: bad snr '%s'", path.c_str(),
                               lineno, fields[4].c_str()));
      }
    }
    try {
      validate_record(r, "record");
    } catch (const DataError& e) {
      throw DataError(strfmt("'%s' line %d: %s", path.c_str(), lineno,
                             e.what()));
    }
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

std::string manifest_dir(const std::string& manifest_path) {
  const fs::path p(manifest_path);
  const fs::path dir = p.parent_path();
  return dir.empty() ? std::string(".") : dir.string();
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_dir) / p).string();
}

// ---- Mixing ------------------------------------------------------------------

MixResult mix_at_snr(const Waveform& signal, const Waveform& noise,
                     double snr_db, Rng& rng) {
  if (signal.samples.empty()) throw DataError("mix_at_snr: empty signal");
  if (noise.samples.empty()) throw DataError("mix_at_snr: empty noise");
  const double p_signal = mean_square(signal.samples);
  if (p_signal == 0.0) {
    throw DataError("mix_at_snr: all-zero signal has undefined SNR");
  }

  // Wrap the noise from a seeded offset to the signal length.
  const size_t n = signal.samples.size();
  const size_t offset = static_cast<size_t>(
      rng.next_index(static_cast<int64_t>(noise.samples.size())));
  std::vector<float> segment(n);
  for (size_t i = 0; i < n; ++i) {
    segment[i] = noise.samples[(offset + i) % noise.samples.size()];
  }
  const double p_noise = mean_square(segment);
  if (p_noise == 0.0) {
    throw DataError("mix_at_snr: all-zero noise segment has undefined SNR");
  }

  const double gain =
      std::sqrt(p_signal / (p_noise * std::pow(10.0, snr_db / 10.0)));
  MixResult result;
  result.noise_gain = gain;
  result.mix.sample_rate = signal.sample_rate;
  result.mix.samples.resize(n);
  double peak = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(signal.samples[i]) +
                     gain * static_cast<double>(segment[i]);
    result.mix.samples[i] = static_cast<float>(v);
    peak = std::max(peak, std::fabs(v));
  }
  if (peak > 1.0) {
    const double scale = 1.0 / peak;
    result.renorm_scale = scale;
    for (auto& v : result.mix.samples) {
      v = static_cast<float>(static_cast<double>(v) * scale);
    }
  }
  return result;
}

// ---- Synthetic corpus ----------------------------------------------------------

Waveform synth_token(int label, Rng& rng) {
  if (label < 0 || label >= kNumClasses) {
    throw DataError(strfmt("synth_token: label %d out of range", label));
  }
  const double dur = 0.5 + 0.3 * rng.next_double();  // 0.5 - 0.8 s
  const int n = static_cast<int>(std::lround(dur * kSampleRate));
  // Partial slots occupy disjoint frequency ranges across all classes, so
  // the +-2% jitter never makes two classes collide.
  const double base[3] = {280.0 + 60.0 * label, 1050.0 + 115.0 * label,
                          2350.0 + 125.0 * label};
  const double amp[3] = {0.5, 0.3, 0.18};
  double freq[3], phase[3];
  for (int j = 0; j < 3; ++j) {
    freq[j] = base[j] * (1.0 + 0.02 * (2.0 * rng.next_double() - 1.0));
    phase[j] = 2.0 * kPi * rng.next_double();
  }
  const int attack = 320;   // 40 ms
  const int release = 960;  // 120 ms
  Waveform w;
  w.samples.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double env = 1.0;
    if (i < attack) env = static_cast<double>(i) / attack;
    if (n - 1 - i < release) {
      env = std::min(env, static_cast<double>(n - 1 - i) / release);
    }
    double v = 0.0;
    for (int j = 0; j < 3; ++j) {
      v += amp[j] * std::sin(2.0 * kPi * freq[j] * i / kSampleRate + phase[j]);
    }
    w.samples[static_cast<size_t>(i)] = static_cast<float>(env * v);
  }
  return w;
}

Waveform make_noise(NoiseType type, int num_samples, Rng& rng) {
  Waveform w;
  w.samples.resize(static_cast<size_t>(num_samples), 0.0f);
  switch (type) {
    case NoiseType::kNone:
      throw DataError("make_noise: 'none' is not a noise scenario");
    case NoiseType::kSubway: {
      // White floor plus periodic impacts.
      for (auto& v : w.samples) {
        v = static_cast<float>(0.25 * rng.gaussian());
      }
      const int period = 1600;  // 0.2 s
      int start = static_cast<int>(rng.next_index(period));
      for (int i = start; i < num_samples; i += period) {
        for (int k = 0; k < 200 && i + k < num_samples; ++k) {
          w.samples[static_cast<size_t>(i + k)] +=
              static_cast<float>(0.9 * std::exp(-k / 25.0));
        }
      }
      break;
    }
    case NoiseType::kBabble: {
      // Sum of 24 random tone bursts.
      for (int b = 0; b < 24; ++b) {
        const double f = 120.0 + rng.next_double() * (3200.0 - 120.0);
        const double phase = 2.0 * kPi * rng.next_double();
        const int start = static_cast<int>(rng.next_index(num_samples));
        const int dur =
            400 + static_cast<int>(rng.next_index(1600));  // 50 - 250 ms
        for (int k = 0; k < dur && start + k < num_samples; ++k) {
          const double env =
              0.5 - 0.5 * std::cos(2.0 * kPi * k / (dur - 1));
          w.samples[static_cast<size_t>(start + k)] += static_cast<float>(
              0.12 * env * std::sin(2.0 * kPi * f * k / kSampleRate + phase));
        }
      }
      break;
    }
    case NoiseType::kCar: {
      // One-pole low-passed white noise; low-frequency rumble.
      const double a = 0.95;
      double y = 0.0;
      for (auto& v : w.samples) {
        y = a * y + (1.0 - a) * rng.gaussian();
        v = static_cast<float>(3.0 * y);
      }
      break;
    }
    case NoiseType::kExhibition: {
      // 1/f-shaped noise (three-pole pinking filter).
      double b0 = 0.0, b1 = 0.0, b2 = 0.0;
      for (auto& v : w.samples) {
        const double white = rng.gaussian();
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        v = static_cast<float>(0.25 * (b0 + b1 + b2 + white * 0.1848));
      }
      break;
    }
  }
  return w;
}

DatasetManifest synth_corpus(const std::string& out_dir, int num_per_class,
                             uint64_t seed) {
  if (num_per_class < 1) {
    throw ConfigError("synth_corpus: num_per_class must be >= 1");
  }
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "clean", ec);
  fs::create_directories(root / "noisy", ec);
  if (!fs::is_directory(root / "clean") || !fs::is_directory(root / "noisy")) {
    throw DataError(strfmt("cannot create corpus directories under '%s'",
                           out_dir.c_str()));
  }

  const NoiseType scenarios[4] = {NoiseType::kSubway, NoiseType::kBabble,
                                  NoiseType::kCar, NoiseType::kExhibition};
  DatasetManifest manifest;

  // Clean set.
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < num_per_class; ++i) {
      Rng rng(Rng::mix3(seed, static_cast<uint64_t>(c),
                        static_cast<uint64_t>(i)));
      const Waveform token = synth_token(c, rng);
      const std::string rel =
          strfmt("clean/%s_%04d.wav", class_name(c).c_str(), i);
      save_wav(token, (root / rel).string());
      UtteranceRecord r;
      r.path = rel;
      r.label = c;
      r.mode = SampleMode::kClean;
      manifest.records.push_back(std::move(r));
    }
  }

  // Multi-condition set: the same tokens mixed at the training SNRs.
  const auto& snrs = training_snrs();
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < num_per_class; ++i) {
      Rng token_rng(Rng::mix3(seed, static_cast<uint64_t>(c),
                              static_cast<uint64_t>(i)));
      const Waveform token = synth_token(c, token_rng);
      const NoiseType type = scenarios[i % 4];
      const int snr = snrs[static_cast<size_t>((i / 4) % snrs.size())];
      Rng noise_rng(Rng::mix3(seed ^ 0x6e6f697379ULL,
                              static_cast<uint64_t>(c),
                              static_cast<uint64_t>(i)));
      const Waveform noise = make_noise(
          type, static_cast<int>(token.samples.size()) + kSampleRate / 2,
          noise_rng);
      const MixResult mixed = mix_at_snr(token, noise, snr, noise_rng);
      const std::string rel =
          strfmt("noisy/%s_%04d_%s_%ddB.wav", class_name(c).c_str(), i,
                 to_string(type).c_str(), snr);
      save_wav(mixed.mix, (root / rel).string());
      UtteranceRecord r;
      r.path = rel;
      r.label = c;
      r.mode = SampleMode::kNoisy;
      r.noise_type = type;
      r.snr_db = snr;
      manifest.records.push_back(std::move(r));
    }
  }

  write_manifest(manifest, (root / "manifest.csv").string());
  return manifest;
}

// ---- Split / relabel -----------------------------------------------------------

DatasetManifest split_dataset(const DatasetManifest& manifest,
                              double test_fraction, uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction > 1.0) {
    throw ConfigError("split_dataset: test_fraction must be in [0,1]");
  }
  std::map<int, int> per_class;
  for (const auto& r : manifest.records) per_class[r.label]++;
  for (const auto& [label, count] : per_class) {
    if (count < 2) {
      throw DataError(strfmt("split_dataset: class %d has %d record(s), "
                             "need at least 2",
                             label, count));
    }
  }

  // Strata keyed by (label, mode, snr); -999 marks "no snr".
  using Key = std::tuple<int, int, int>;
  std::map<Key, std::vector<size_t>> strata;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    const Key key{r.label, r.mode == SampleMode::kClean ? 0 : 1,
                  r.snr_db ? *r.snr_db : -999};
    strata[key].push_back(i);
  }

  DatasetManifest out = manifest;
  for (auto& [key, indices] : strata) {
    // Canonical order first so splits do not depend on manifest row order.
    std::sort(indices.begin(), indices.end(), [&](size_t a, size_t b) {
      return manifest.records[a].path < manifest.records[b].path;
    });
    const auto [label, mode, snr] = key;
    Rng rng(Rng::mix3(Rng::mix(seed, static_cast<uint64_t>(label)),
                      static_cast<uint64_t>(mode),
                      static_cast<uint64_t>(snr + 1000)));
    shuffle(indices, rng);
    const auto n_test = static_cast<size_t>(
        std::lround(test_fraction * static_cast<double>(indices.size())));
    for (size_t j = 0; j < indices.size(); ++j) {
      out.records[indices[j]].split = j < n_test ? Split::kTest : Split::kTrain;
    }
  }
  return out;
}

DatasetManifest relabel_for_binary(const DatasetManifest& manifest) {
  DatasetManifest out = manifest;
  for (auto& r : out.records) {
    r.label = r.mode == SampleMode::kClean ? 0 : 1;
  }
  return out;
}

}  // namespace resasr
