// Copyright (c) 2026 The kwskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef KWS_AUDIO_H_
#define KWS_AUDIO_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "kws/common.h"

namespace kws {

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 16000;

  size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

namespace internal {

inline uint32_t ReadU32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t ReadU16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline void PutU32(std::string* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>(v >> (8 * i)));
}

inline void PutU16(std::string* out, uint16_t v) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>(v >> 8));
}

}  // namespace internal

// Parses an in-memory RIFF/WAVE image. Only mono 16-bit PCM is accepted.
inline AudioClip ParseWav(const std::string& bytes, const std::string& name) {
  using internal::ReadU16;
  using internal::ReadU32;
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t n = bytes.size();
  if (n < 12 || std::memcmp(data, "RIFF", 4) != 0 ||
      std::memcmp(data + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kMalformedWav, name + ": not a RIFF/WAVE file");
  }
  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  while (pos + 8 <= n) {
    const uint32_t chunk_size = ReadU32(data + pos + 4);
    const unsigned char* body = data + pos + 8;
    const size_t avail = n - pos - 8;
    if (std::memcmp(data + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16 || avail < 16) {
        throw Error(ErrorCode::kMalformedWav, name + ": truncated fmt chunk");
      }
      format = ReadU16(body);
      channels = ReadU16(body + 2);
      rate = ReadU32(body + 4);
      bits = ReadU16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(data + pos, "data", 4) == 0) {
      if (!have_fmt) {
        throw Error(ErrorCode::kMalformedWav, name + ": data before fmt");
      }
      if (format != 1 || channels != 1 || bits != 16) {
        throw Error(ErrorCode::kUnsupportedFormat,
                    name + ": need mono 16-bit PCM, got format " +
                        std::to_string(format) + ", " +
                        std::to_string(channels) + " channel(s), " +
                        std::to_string(bits) + " bits");
      }
      if (rate == 0) {
        throw Error(ErrorCode::kMalformedWav, name + ": zero sample rate");
      }
      if (chunk_size > avail || chunk_size % 2 != 0) {
        throw Error(ErrorCode::kMalformedWav, name + ": truncated data chunk");
      }
      if (chunk_size == 0) {
        throw Error(ErrorCode::kMalformedWav, name + ": empty data chunk");
      }
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(chunk_size / 2);
      for (size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<int16_t>(ReadU16(body + 2 * i));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return clip;
    }
    pos += 8 + chunk_size + (chunk_size & 1);
  }
  throw Error(ErrorCode::kMalformedWav, name + ": no data chunk");
}

inline AudioClip ReadWav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return ParseWav(bytes, path);
}

inline std::string EncodeWav(const AudioClip& clip) {
  using internal::PutU16;
  using internal::PutU32;
  const auto data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(&out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(&out, 16);
  PutU16(&out, 1);
  PutU16(&out, 1);
  PutU32(&out, static_cast<uint32_t>(clip.sample_rate));
  PutU32(&out, static_cast<uint32_t>(clip.sample_rate) * 2);
  PutU16(&out, 2);
  PutU16(&out, 16);
  out += "data";
  PutU32(&out, data_bytes);
  for (float s : clip.samples) {
    const float scaled = std::round(s * 32768.0f);
    const auto v = static_cast<int16_t>(
        std::fmax(-32768.0f, std::fmin(32767.0f, scaled)));
    PutU16(&out, static_cast<uint16_t>(v));
  }
  return out;
}

inline void WriteWav(const std::string& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  const std::string bytes = EncodeWav(clip);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

namespace internal {

constexpr int kSincHalfTaps = 16;

// Band-limited interpolation: output sample i sits at input position
// i * step; cutoff is the passband edge as a fraction of the input Nyquist.
// Taps j = floor(t) - 15 .. floor(t) + 16 with a Hann-weighted sinc kernel,
// looked up from a table linearly interpolated over 512 phases per sample.
// When step is a ratio p / q with small q the tap weights repeat with
// period q and are computed once per phase.
inline std::vector<float> SincInterpolate(const std::vector<float>& x,
                                          size_t out_len, double step,
                                          double cutoff) {
  constexpr int kPhases = 512;
  constexpr int kTaps = 2 * kSincHalfTaps;
  const double half_width = kSincHalfTaps;
  std::vector<double> table(kSincHalfTaps * kPhases + 2, 0.0);
  for (size_t k = 0; k + 1 < table.size(); ++k) {
    const double dt = static_cast<double>(k) / kPhases;
    if (dt >= half_width) break;
    const double arg = cutoff * dt;
    const double sinc =
        arg == 0.0 ? 1.0
                   : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double window =
        0.5 + 0.5 * std::cos(std::numbers::pi * dt / half_width);
    table[k] = cutoff * sinc * window;
  }
  // w[m] weights input sample floor(t) - 15 + m for fractional offset frac.
  auto weights = [&](double frac, double* w) {
    for (int m = 0; m < kTaps; ++m) {
      const double pos =
          std::fabs(frac + kSincHalfTaps - 1 - m) * kPhases;
      const auto idx = static_cast<size_t>(pos);
      if (idx >= static_cast<size_t>(kSincHalfTaps * kPhases)) {
        w[m] = 0.0;
        continue;
      }
      const double f = pos - static_cast<double>(idx);
      w[m] = table[idx] + f * (table[idx + 1] - table[idx]);
    }
  };
  int64_t q = 0, p = 0;
  for (int64_t d = 1; d <= 4096; ++d) {
    const double num = step * static_cast<double>(d);
    if (std::fabs(num - std::round(num)) < 1e-9 * d) {
      q = d;
      p = std::llround(num);
      break;
    }
  }
  std::vector<double> phase_weights;
  if (q) {
    phase_weights.resize(static_cast<size_t>(q) * kTaps);
    for (int64_t r = 0; r < q; ++r) {
      weights(static_cast<double>((r * p) % q) / static_cast<double>(q),
              phase_weights.data() + r * kTaps);
    }
  }
  std::vector<float> y(out_len);
  const auto n = static_cast<int64_t>(x.size());
  double w_local[kTaps];
  for (size_t i = 0; i < out_len; ++i) {
    int64_t base;
    const double* w;
    if (q) {
      const int64_t num = static_cast<int64_t>(i) * p;
      base = num / q;
      w = phase_weights.data() + (static_cast<int64_t>(i) % q) * kTaps;
    } else {
      const double t = static_cast<double>(i) * step;
      base = static_cast<int64_t>(std::floor(t));
      weights(t - static_cast<double>(base), w_local);
      w = w_local;
    }
    const int64_t first = base - kSincHalfTaps + 1;
    const int64_t lo = std::max<int64_t>(0, first);
    const int64_t hi = std::min<int64_t>(n - 1, base + kSincHalfTaps);
    double acc = 0.0;
    for (int64_t j = lo; j <= hi; ++j) acc += x[j] * w[j - first];
    y[i] = static_cast<float>(acc);
  }
  return y;
}

}  // namespace internal

inline AudioClip Resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "target rate must be positive");
  }
  if (target_rate == clip.sample_rate) return clip;
  const double ratio =
      static_cast<double>(target_rate) / static_cast<double>(clip.sample_rate);
  const auto out_len = static_cast<size_t>(
      std::llround(static_cast<double>(clip.samples.size()) * ratio));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples = internal::SincInterpolate(clip.samples, out_len, 1.0 / ratio,
                                          std::min(1.0, ratio));
  return out;
}

// sox-style "speed": the time axis is resampled, so pitch moves with tempo.
inline AudioClip SpeedPerturb(const AudioClip& clip, double factor) {
  if (!(factor > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "speed factor must be positive");
  }
  if (factor == 1.0) return clip;
  const auto out_len = static_cast<size_t>(
      std::llround(static_cast<double>(clip.samples.size()) / factor));
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples = internal::SincInterpolate(clip.samples, out_len, factor,
                                          std::min(1.0, 1.0 / factor));
  return out;
}

}  // namespace kws

#endif  // KWS_AUDIO_H_
