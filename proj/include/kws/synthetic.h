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

#ifndef KWS_SYNTHETIC_H_
#define KWS_SYNTHETIC_H_

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "kws/audio.h"
#include "kws/common.h"
#include "kws/dataio.h"
#include "kws/features.h"

namespace kws {

// Keyword k is a fixed sequence of tones; each rendering jitters pitch,
// tempo and level and adds white noise. Negatives are noise with tones in
// random order and pitch.
struct SyntheticConfig {
  int sample_rate = 16000;
  int num_keywords = 2;
  int positives_per_keyword = 1000;
  double negative_seconds = 7200.0;
  double negative_clip_seconds = 2.0;
  double pitch_jitter = 0.08;  // relative
  double tempo_jitter = 0.15;  // relative
  double min_noise = 0.005;
  double max_noise = 0.03;
  uint64_t seed = 777;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    SyntheticConfig, sample_rate, num_keywords, positives_per_keyword,
    negative_seconds, negative_clip_seconds, pitch_jitter, tempo_jitter,
    min_noise, max_noise, seed)

struct Tone {
  double hz = 0.0;
  double seconds = 0.0;
};

inline std::vector<Tone> KeywordTemplate(int keyword) {
  static const std::vector<std::vector<Tone>> kFixed = {
      {{500, 0.12}, {1000, 0.10}, {750, 0.14}},
      {{1400, 0.11}, {650, 0.12}, {1800, 0.13}},
  };
  if (keyword < static_cast<int>(kFixed.size())) return kFixed[keyword];
  std::mt19937_64 rng(Mix64(0x6b657977ull + keyword));
  std::vector<Tone> tones;
  for (int i = 0; i < 3; ++i) {
    tones.push_back({400.0 + 1800.0 * UniformReal(rng),
                     0.09 + 0.06 * UniformReal(rng)});
  }
  return tones;
}

namespace internal {

// Adds a tone with 10 ms raised-cosine ramps starting at sample `at`.
inline void AddTone(std::vector<float>* x, int64_t at, const Tone& tone,
                    double amplitude, int sample_rate) {
  const auto n = static_cast<int64_t>(tone.seconds * sample_rate);
  const int64_t ramp = std::min<int64_t>(n / 2, sample_rate / 100);
  const double w = 2.0 * std::numbers::pi * tone.hz / sample_rate;
  for (int64_t i = 0; i < n && at + i < static_cast<int64_t>(x->size()); ++i) {
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
    if (n - 1 - i < ramp) {
      env = 0.5 - 0.5 * std::cos(std::numbers::pi * (n - 1 - i) / ramp);
    }
    (*x)[at + i] += static_cast<float>(amplitude * env * std::sin(w * i));
  }
}

inline void AddNoise(std::vector<float>* x, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, stddev);
  for (auto& v : *x) v += static_cast<float>(gauss(rng));
}

// Rounds to the 16-bit grid so in-memory clips equal their WAV files.
inline void To16Bit(std::vector<float>* x) {
  for (auto& v : *x) {
    const float q = std::round(v * 32768.0f);
    v = std::fmax(-32768.0f, std::fmin(32767.0f, q)) / 32768.0f;
  }
}

inline double Jitter(std::mt19937_64& rng, double rel) {
  return 1.0 + rel * (2.0 * UniformReal(rng) - 1.0);
}

}  // namespace internal

// Renders keyword k into x starting at sample `at`; returns the end sample.
inline int64_t RenderKeyword(std::vector<float>* x, int64_t at, int keyword,
                             const SyntheticConfig& cfg, std::mt19937_64& rng) {
  const double pitch = internal::Jitter(rng, cfg.pitch_jitter);
  const double tempo = internal::Jitter(rng, cfg.tempo_jitter);
  const double level = 0.1 + 0.3 * UniformReal(rng);
  for (const Tone& t : KeywordTemplate(keyword)) {
    const Tone tone{t.hz * pitch, t.seconds * tempo};
    internal::AddTone(x, at, tone, level, cfg.sample_rate);
    at += static_cast<int64_t>(tone.seconds * cfg.sample_rate);
    at += static_cast<int64_t>((0.02 + 0.02 * UniformReal(rng)) * tempo *
                               cfg.sample_rate);
  }
  return at;
}

// Distractor tones in random order and pitch over [from, to).
inline void RenderDistractors(std::vector<float>* x, int64_t from, int64_t to,
                              const SyntheticConfig& cfg, std::mt19937_64& rng) {
  int64_t at = from;
  while (true) {
    at += static_cast<int64_t>((0.05 + 0.4 * UniformReal(rng)) * cfg.sample_rate);
    const Tone tone{300.0 + 2200.0 * UniformReal(rng),
                    0.06 + 0.14 * UniformReal(rng)};
    const auto n = static_cast<int64_t>(tone.seconds * cfg.sample_rate);
    if (at + n > to) break;
    internal::AddTone(x, at, tone, 0.05 + 0.3 * UniformReal(rng),
                      cfg.sample_rate);
    at += n;
  }
}

// 1-based index of the first frame whose window covers sample `end`.
inline int64_t EndFrameForSample(int64_t end, const FeatureConfig& feat,
                                 int64_t num_samples) {
  const int64_t win = feat.window_samples(), shift = feat.shift_samples();
  const int64_t frames = feat.NumFrames(num_samples);
  int64_t t = end <= win ? 0 : (end - win + shift - 1) / shift;
  return std::clamp<int64_t>(t + 1, 1, frames);
}

inline AudioClip SyntheticPositive(int keyword, const SyntheticConfig& cfg,
                                   std::mt19937_64& rng, int64_t* end_sample) {
  const int sr = cfg.sample_rate;
  const auto lead = static_cast<int64_t>((0.2 + 0.3 * UniformReal(rng)) * sr);
  const auto tail = static_cast<int64_t>((0.1 + 0.2 * UniformReal(rng)) * sr);
  std::vector<float> x(static_cast<size_t>(lead + sr), 0.0f);
  const int64_t end = RenderKeyword(&x, lead, keyword, cfg, rng);
  x.resize(static_cast<size_t>(end + tail), 0.0f);
  internal::AddNoise(&x, cfg.min_noise + (cfg.max_noise - cfg.min_noise) *
                                             UniformReal(rng), rng);
  internal::To16Bit(&x);
  *end_sample = end;
  return {std::move(x), sr};
}

inline AudioClip SyntheticNegative(double seconds, const SyntheticConfig& cfg,
                                   std::mt19937_64& rng) {
  const auto n = static_cast<int64_t>(seconds * cfg.sample_rate);
  std::vector<float> x(static_cast<size_t>(n), 0.0f);
  RenderDistractors(&x, 0, n, cfg, rng);
  internal::AddNoise(&x, cfg.min_noise + (cfg.max_noise - cfg.min_noise) *
                                             UniformReal(rng), rng);
  internal::To16Bit(&x);
  return {std::move(x), cfg.sample_rate};
}

struct SyntheticSet {
  std::vector<ManifestEntry> entries;
  AudioCache cache;  // keyed by each entry's wav path
};

// Keys are "<prefix>-kw<k>-<i>" and "<prefix>-neg-<i>"; wav paths point
// into dir (files are only written by WriteSyntheticSet).
inline SyntheticSet GenerateSynthetic(const SyntheticConfig& cfg,
                                      const std::string& prefix,
                                      const std::string& dir,
                                      const FeatureConfig& feat = {}) {
  SyntheticSet set;
  auto add = [&](const std::string& key, int label, AudioClip clip,
                 std::optional<int64_t> end_frame) {
    ManifestEntry e;
    e.key = key;
    e.wav = (std::filesystem::path(dir) / (key + ".wav")).string();
    e.label = label;
    e.end_frame = end_frame;
    e.duration_frames = feat.NumFrames(static_cast<int64_t>(clip.size()));
    set.cache.Insert(e.wav, std::move(clip));
    set.entries.push_back(std::move(e));
  };
  for (int k = 0; k < cfg.num_keywords; ++k) {
    for (int i = 0; i < cfg.positives_per_keyword; ++i) {
      const std::string key =
          prefix + "-kw" + std::to_string(k) + "-" + std::to_string(i);
      std::mt19937_64 rng(DeriveSeed(cfg.seed, key, 0));
      int64_t end = 0;
      AudioClip clip = SyntheticPositive(k, cfg, rng, &end);
      const int64_t end_frame =
          EndFrameForSample(end, feat, static_cast<int64_t>(clip.size()));
      add(key, k, std::move(clip), end_frame);
    }
  }
  const auto negatives = static_cast<int>(
      std::ceil(cfg.negative_seconds / cfg.negative_clip_seconds - 1e-9));
  for (int i = 0; i < negatives; ++i) {
    const std::string key = prefix + "-neg-" + std::to_string(i);
    std::mt19937_64 rng(DeriveSeed(cfg.seed, key, 0));
    add(key, -1, SyntheticNegative(cfg.negative_clip_seconds, cfg, rng),
        std::nullopt);
  }
  return set;
}

inline void WriteSyntheticSet(const SyntheticSet& set,
                              const std::string& manifest_path) {
  for (const auto& e : set.entries) {
    std::filesystem::create_directories(
        std::filesystem::path(e.wav).parent_path());
    WriteWav(e.wav, *set.cache.Find(e.wav));
  }
  WriteManifest(manifest_path, set.entries);
}

struct SyntheticStream {
  AudioClip clip;
  std::vector<std::pair<int, int64_t>> keywords;  // (keyword, end sample)
};

// A long stream of distractor audio with a keyword about every
// `keyword_every` seconds.
inline SyntheticStream MakeSyntheticStream(double seconds, double keyword_every,
                                           const SyntheticConfig& cfg,
                                           uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int sr = cfg.sample_rate;
  const auto n = static_cast<int64_t>(seconds * sr);
  SyntheticStream s;
  std::vector<float> x(static_cast<size_t>(n), 0.0f);
  int64_t at = 0;
  int k = 0;
  while (true) {
    const auto gap = static_cast<int64_t>(
        keyword_every * (0.5 + UniformReal(rng)) * sr);
    RenderDistractors(&x, at, std::min(n, at + gap / 2), cfg, rng);
    at += gap;
    if (at + sr >= n) break;
    const int64_t end = RenderKeyword(&x, at, k, cfg, rng);
    s.keywords.emplace_back(k, end);
    at = end;
    k = (k + 1) % cfg.num_keywords;
  }
  internal::AddNoise(&x, cfg.min_noise, rng);
  internal::To16Bit(&x);
  s.clip = {std::move(x), sr};
  return s;
}

}  // namespace kws

#endif  // KWS_SYNTHETIC_H_
