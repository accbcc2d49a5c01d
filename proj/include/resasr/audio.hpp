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
#include <vector>

#include "resasr/tensor.hpp"

namespace resasr {

constexpr int kSampleRate = 8000;
constexpr int kFrameLength = 200;  // 25 ms at 8 kHz
constexpr int kFrameHop = 80;      // 10 ms
constexpr int kFftSize = 256;
constexpr int kNumMels = 40;
constexpr int kNumFrames = 64;
constexpr float kPreEmphasis = 0.97f;
constexpr double kLogFloor = 1e-10;

struct Waveform {
  std::vector<float> samples;  // nominal range [-1, 1]
  int sample_rate = kSampleRate;
};

/// Reads a RIFF/WAVE file. Only PCM-16, mono, little-endian, 8000 Hz is
/// accepted; anything else is rejected with a reason. Samples are scaled
/// by 1/32768.
Waveform load_wav(const std::string& path);

/// Writes PCM-16 mono 8000 Hz. Samples are clipped to [-1, 1].
void save_wav(const Waveform& w, const std::string& path);

// Log-Mel spectrogram on a fixed canvas: `mels` bands x `frames` columns.
// Values are natural-log filterbank energies before any normalization.
struct FeatureMatrix {
  int mels = 0;
  int frames = 0;
  std::vector<float> values;  // row-major, mels x frames

  float& at(int mel, int frame) {
    return values[static_cast<size_t>(mel) * frames + frame];
  }
  float at(int mel, int frame) const {
    return values[static_cast<size_t>(mel) * frames + frame];
  }
};

/// mel(f) = 2595 * log10(1 + f / 700).
double mel_from_hz(double hz);
double hz_from_mel(double mel);

// Pipeline: pre-emphasis 0.97, 25 ms frames with 10 ms hop, Hamming window,
// 256-point power spectrum, 40 triangular Mel filters over 0-4000 Hz,
// log(x + 1e-10), then zero-pad or center-crop to the frame canvas.
// The waveform must cover at least one frame (200 samples).
FeatureMatrix log_mel(const Waveform& w, int mels = kNumMels,
                      int frames = kNumFrames);

/// Number of analysis frames a waveform yields before padding/cropping.
int raw_frame_count(const Waveform& w);

// Per-band normalization statistics, computed over the training split only
// and carried inside checkpoints.
struct FeatureNorm {
  std::vector<float> mean;  // per mel band
  std::vector<float> std;   // per mel band, floored away from zero
};

FeatureNorm compute_feature_norm(const std::vector<FeatureMatrix>& mats);
void normalize_features(FeatureMatrix& m, const FeatureNorm& norm);

/// (1, mels, frames) tensor view of a feature matrix.
Tensor feature_tensor(const FeatureMatrix& m);

}  // namespace resasr
