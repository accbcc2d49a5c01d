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

#include <optional>
#include <string>
#include <vector>

#include "resasr/audio.hpp"
#include "resasr/rng.hpp"

namespace resasr {

constexpr int kNumClasses = 11;  // digits 1-9, "zero", "oh"

enum class SampleMode { kClean, kNoisy };
enum class NoiseType { kNone, kSubway, kBabble, kCar, kExhibition };
enum class Split { kTrain, kTest };

const std::vector<std::string>& class_names();
std::string class_name(int label);

std::string to_string(SampleMode mode);
std::string to_string(NoiseType type);
SampleMode mode_from_string(const std::string& s);
NoiseType noise_from_string(const std::string& s);

/// SNRs used when building the multi-condition training set.
const std::vector<int>& training_snrs();  // {20, 15, 10, 5}
/// SNRs a manifest may carry (test sets may add -5 dB).
const std::vector<int>& allowed_snrs();   // {20, 15, 10, 5, -5}

struct UtteranceRecord {
  std::string path;  // relative to the manifest directory unless absolute
  int label = 0;
  SampleMode mode = SampleMode::kClean;
  NoiseType noise_type = NoiseType::kNone;
  std::optional<int> snr_db;  // absent for clean records
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::vector<UtteranceRecord> records;
};

// CSV interchange. Header is exactly `path,label,mode,noise_type,snr_db`;
// the snr_db field is empty for clean rows. The split tag is not persisted;
// it is recomputed deterministically from a seed.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest parse_manifest(const std::string& path);

/// Directory containing a manifest; record paths resolve against it.
std::string manifest_dir(const std::string& manifest_path);
std::string resolve_path(const std::string& base_dir, const std::string& path);

struct MixResult {
  Waveform mix;
  double noise_gain = 0.0;    // scale applied to the noise segment
  double renorm_scale = 1.0;  // < 1 only when clipping had to be avoided
};

// Adds noise to reach the requested SNR exactly: the noise is wrapped from a
// seeded random offset to the signal length and scaled by
// sqrt(P_signal / (P_noise * 10^(snr/10))) with mean-square powers taken
// over all samples. If the mix would clip, the whole mix is scaled down
// (which leaves the SNR unchanged) and the scale recorded.
MixResult mix_at_snr(const Waveform& signal, const Waveform& noise,
                     double snr_db, Rng& rng);

// Synthetic stand-in corpus: per class, deterministic three-partial tokens
// with amplitude envelope and seeded +-2% frequency jitter (0.5-0.8 s), plus
// a matching multi-condition set mixed with four synthetic noise scenarios
// at the training SNRs. Writes WAV files and manifest.csv under out_dir and
// returns the manifest. Rebuilding with the same seed is byte-identical.
DatasetManifest synth_corpus(const std::string& out_dir, int num_per_class,
                             uint64_t seed);

/// One synthetic token; exposed for tests.
Waveform synth_token(int label, Rng& rng);

/// One noise stream of the given length; exposed for tests.
Waveform make_noise(NoiseType type, int num_samples, Rng& rng);

// Deterministic stratified split by (label, mode, snr_db). Each stratum
// contributes round(test_fraction * size) records to the test split.
DatasetManifest split_dataset(const DatasetManifest& manifest,
                              double test_fraction, uint64_t seed);

/// Replaces labels with the mode (clean -> 0, noisy -> 1).
DatasetManifest relabel_for_binary(const DatasetManifest& manifest);

}  // namespace resasr
