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

#include "resasr/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "resasr/common.hpp"

namespace resasr {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

// In-place radix-2 FFT; n must be a power of two.
void fft(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t j = 0; j < len / 2; ++j) {
        const size_t a = i + j, b = i + j + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

// Triangular filters on the Mel scale, HTK style, spanning 0..sample_rate/2.
std::vector<double> mel_filterbank(int mels, int bins) {
  const double f_max = kSampleRate / 2.0;
  const double mel_max = mel_from_hz(f_max);
  std::vector<double> points(static_cast<size_t>(mels) + 2);
  for (int i = 0; i < mels + 2; ++i) {
    points[static_cast<size_t>(i)] =
        hz_from_mel(mel_max * static_cast<double>(i) / (mels + 1));
  }
  std::vector<double> fb(static_cast<size_t>(mels) * bins, 0.0);
  for (int b = 0; b < mels; ++b) {
    const double lo = points[static_cast<size_t>(b)];
    const double mid = points[static_cast<size_t>(b) + 1];
    const double hi = points[static_cast<size_t>(b) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / kFftSize;
      double w = 0.0;
      if (f > lo && f < mid) {
        w = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      fb[static_cast<size_t>(b) * bins + k] = w;
    }
  }
  return fb;
}

}  // namespace

double mel_from_hz(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double hz_from_mel(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

Waveform load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(strfmt("cannot open wav file '%s'", path.c_str()));
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 ||
      std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw DataError(strfmt("'%s' is not a RIFF/WAVE file", path.c_str()));
  }

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  uint32_t data_len = 0;
  size_t off = 12;
  while (off + 8 <= n) {
    const uint32_t chunk_len = read_u32(p + off + 4);
    const unsigned char* body = p + off + 8;
    if (off + 8 + chunk_len > n) {
      throw DataError(strfmt("'%s': truncated chunk", path.c_str()));
    }
    if (std::memcmp(p + off, "fmt ", 4) == 0) {
      if (chunk_len < 16) {
        throw DataError(strfmt("'%s': malformed fmt chunk", path.c_str()));
      }
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    off += 8 + chunk_len + (chunk_len & 1);  // chunks are word aligned
  }
  if (!have_fmt || data == nullptr) {
    throw DataError(strfmt("'%s': missing fmt or data chunk", path.c_str()));
  }
  if (format != 1) {
    throw DataError(strfmt("'%s': unsupported codec %u (want PCM)",
                           path.c_str(), format));
  }
  if (channels != 1) {
    throw DataError(strfmt("'%s': unsupported channel count %u (want mono)",
                           path.c_str(), channels));
  }
  if (rate != static_cast<uint32_t>(kSampleRate)) {
    throw DataError(strfmt("'%s': unsupported sample rate %u (want %d)",
                           path.c_str(), rate, kSampleRate));
  }
  if (bits != 16) {
    throw DataError(strfmt("'%s': unsupported bit depth %u (want 16)",
                           path.c_str(), bits));
  }
  if (data_len % 2 != 0) {
    throw DataError(strfmt("'%s': odd PCM payload size", path.c_str()));
  }

  Waveform w;
  w.sample_rate = kSampleRate;
  const size_t count = data_len / 2;
  if (count == 0) throw DataError(strfmt("'%s': empty waveform", path.c_str()));
  w.samples.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const int16_t s = static_cast<int16_t>(
        static_cast<uint16_t>(data[2 * i] | (data[2 * i + 1] << 8)));
    w.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  return w;
}

void save_wav(const Waveform& w, const std::string& path) {
  const uint32_t nsamples = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_len = nsamples * 2;
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(kSampleRate));
  put_u32(out, static_cast<uint32_t>(kSampleRate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits
  out += "data";
  put_u32(out, data_len);
  for (float v : w.samples) {
    const float c = std::min(1.0f, std::max(-1.0f, v));
    const auto s = static_cast<int16_t>(
        std::lround(static_cast<double>(c) * 32767.0));
    put_u16(out, static_cast<uint16_t>(s));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(strfmt("cannot write '%s'", path.c_str()));
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw DataError(strfmt("short write to '%s'", path.c_str()));
}

int raw_frame_count(const Waveform& w) {
  const int n = static_cast<int>(w.samples.size());
  if (n < kFrameLength) return 0;
  return 1 + (n - kFrameLength) / kFrameHop;
}

FeatureMatrix log_mel(const Waveform& w, int mels, int frames) {
  if (w.sample_rate != kSampleRate) {
    throw DataError(strfmt("log_mel: sample rate %d (want %d)", w.sample_rate,
                           kSampleRate));
  }
  const int total = raw_frame_count(w);
  if (total < 1) {
    throw DataError(strfmt("log_mel: waveform of %zu samples is shorter than "
                           "one %d-sample frame",
                           w.samples.size(), kFrameLength));
  }

  // Pre-emphasis over the whole signal.
  std::vector<double> emph(w.samples.size());
  emph[0] = static_cast<double>(w.samples[0]);
  for (size_t i = 1; i < w.samples.size(); ++i) {
    emph[i] = static_cast<double>(w.samples[i]) -
              static_cast<double>(kPreEmphasis) *
                  static_cast<double>(w.samples[i - 1]);
  }

  std::vector<double> window(kFrameLength);
  for (int i = 0; i < kFrameLength; ++i) {
    window[static_cast<size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * kPi * i / (kFrameLength - 1));
  }

  const int bins = kFftSize / 2 + 1;
  const std::vector<double> fb = mel_filterbank(mels, bins);

  // Full spectrogram, then pad or center-crop onto the canvas.
  std::vector<double> energies(static_cast<size_t>(mels) * total);
  std::vector<double> re(kFftSize), im(kFftSize), power(
      static_cast<size_t>(bins));
  for (int t = 0; t < total; ++t) {
    const size_t start = static_cast<size_t>(t) * kFrameHop;
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (int i = 0; i < kFrameLength; ++i) {
      re[static_cast<size_t>(i)] =
          emph[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
    }
    fft(re, im);
    for (int k = 0; k < bins; ++k) {
      power[static_cast<size_t>(k)] = re[static_cast<size_t>(k)] *
                                          re[static_cast<size_t>(k)] +
                                      im[static_cast<size_t>(k)] *
                                          im[static_cast<size_t>(k)];
    }
    for (int b = 0; b < mels; ++b) {
      const double* row = fb.data() + static_cast<size_t>(b) * bins;
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += row[k] * power[static_cast<size_t>(k)];
      energies[static_cast<size_t>(b) * total + t] = std::log(e + kLogFloor);
    }
  }

  FeatureMatrix m;
  m.mels = mels;
  m.frames = frames;
  m.values.assign(static_cast<size_t>(mels) * frames, 0.0f);
  const int start_col = total >= frames ? (total - frames) / 2 : 0;
  const int copy = std::min(total, frames);
  for (int b = 0; b < mels; ++b) {
    for (int t = 0; t < copy; ++t) {
      m.at(b, t) = static_cast<float>(
          energies[static_cast<size_t>(b) * total + start_col + t]);
    }
  }
  return m;
}

FeatureNorm compute_feature_norm(const std::vector<FeatureMatrix>& mats) {
  if (mats.empty()) throw DataError("compute_feature_norm: no features");
  const int mels = mats[0].mels;
  const int frames = mats[0].frames;
  FeatureNorm norm;
  norm.mean.resize(static_cast<size_t>(mels));
  norm.std.resize(static_cast<size_t>(mels));
  const double count = static_cast<double>(mats.size()) * frames;
  for (int b = 0; b < mels; ++b) {
    double s = 0.0;
    for (const auto& m : mats) {
      for (int t = 0; t < frames; ++t) s += static_cast<double>(m.at(b, t));
    }
    const double mu = s / count;
    double v = 0.0;
    for (const auto& m : mats) {
      for (int t = 0; t < frames; ++t) {
        const double d = static_cast<double>(m.at(b, t)) - mu;
        v += d * d;
      }
    }
    norm.mean[static_cast<size_t>(b)] = static_cast<float>(mu);
    norm.std[static_cast<size_t>(b)] =
        static_cast<float>(std::max(std::sqrt(v / count), 1e-6));
  }
  return norm;
}

void normalize_features(FeatureMatrix& m, const FeatureNorm& norm) {
  if (static_cast<int>(norm.mean.size()) != m.mels) {
    throw DataError("normalize_features: band count mismatch");
  }
  for (int b = 0; b < m.mels; ++b) {
    const float mu = norm.mean[static_cast<size_t>(b)];
    const float sd = norm.std[static_cast<size_t>(b)];
    for (int t = 0; t < m.frames; ++t) m.at(b, t) = (m.at(b, t) - mu) / sd;
  }
}

Tensor feature_tensor(const FeatureMatrix& m) {
  return Tensor({1, m.mels, m.frames}, m.values);
}

}  // namespace resasr
