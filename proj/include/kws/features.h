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


#ifndef KWS_FEATURES_H_
#define KWS_FEATURES_H_

#include <fftw3.h>

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <vector>

#include "kws/audio.h"
#include "kws/common.h"
#include "json.hpp"

namespace kws {

struct FeatureConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double shift_ms = 10.0;
  int num_mels = 40;
  double low_freq = 20.0;
  double high_freq = 0.0;  // <= 0 means Nyquist + high_freq
  double log_floor = FLT_EPSILON;
  double preemph = 0.97;

  int window_samples() const {
    return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0));
  }
  int shift_samples() const {
    return static_cast<int>(std::lround(sample_rate * shift_ms / 1000.0));
  }
  int fft_size() const {
    int n = 1;
    while (n < window_samples()) n <<= 1;
    return n;
  }
  // 1 + floor((samples - window) / shift), or 0 when shorter than a window.
  int64_t NumFrames(int64_t num_samples) const {
    if (num_samples < window_samples()) return 0;
    return 1 + (num_samples - window_samples()) / shift_samples();
  }
  void Validate() const {
    if (sample_rate <= 0 || window_ms <= 0 || shift_ms <= 0 ||
        shift_ms > window_ms || num_mels < 1 || !(log_floor > 0.0)) {
      throw Error(ErrorCode::kInvalidConfig, "bad feature config");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FeatureConfig, sample_rate, window_ms,
                                   shift_ms, num_mels, low_freq, high_freq,
                                   log_floor, preemph)

// Row-major [frames x dims] grid of log mel energies.
struct FeatureMatrix {
  int64_t frames = 0;
  int dims = 0;
  std::vector<float> values;
  double frame_shift_ms = 10.0;

  float* row(int64_t t) { return values.data() + t * dims; }
  const float* row(int64_t t) const { return values.data() + t * dims; }
  float& at(int64_t t, int d) { return values[t * dims + d]; }
  float at(int64_t t, int d) const { return values[t * dims + d]; }
};

namespace internal {

inline std::mutex& FftwPlannerMutex() {
  static std::mutex mu;
  return mu;
}

inline double MelScale(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

}  // namespace internal

// Per-frame log-mel filter bank. One instance owns its FFT buffers, so an
// instance must not be shared between threads; distinct instances may run
// concurrently.
class FbankComputer {
 public:
  explicit FbankComputer(const FeatureConfig& cfg) : cfg_(cfg) {
    cfg_.Validate();
    window_length_ = cfg_.window_samples();
    fft_size_ = cfg_.fft_size();
    window_.resize(window_length_);
    const double a = 2.0 * std::numbers::pi / (window_length_ - 1);
    for (int i = 0; i < window_length_; ++i) {
      window_[i] = std::pow(0.5 - 0.5 * std::cos(a * i), 0.85);
    }
    BuildMelBanks();
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * fft_size_));
    out_ = static_cast<fftw_complex*>(
        fftw_malloc(sizeof(fftw_complex) * (fft_size_ / 2 + 1)));
    std::lock_guard<std::mutex> lock(internal::FftwPlannerMutex());
    plan_ = fftw_plan_dft_r2c_1d(fft_size_, in_, out_, FFTW_ESTIMATE);
  }

  FbankComputer(const FbankComputer&) = delete;
  FbankComputer& operator=(const FbankComputer&) = delete;

  ~FbankComputer() {
    {
      std::lock_guard<std::mutex> lock(internal::FftwPlannerMutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  const FeatureConfig& config() const { return cfg_; }
  int dims() const { return cfg_.num_mels; }

  // frame points at window_samples() samples; writes num_mels values.
  void ComputeFrame(const float* frame, float* out) {
    for (int i = 0; i < window_length_; ++i) in_[i] = frame[i];
    if (cfg_.preemph != 0.0) {
      for (int i = window_length_ - 1; i > 0; --i) {
        in_[i] -= cfg_.preemph * in_[i - 1];
      }
      in_[0] -= cfg_.preemph * in_[0];
    }
    for (int i = 0; i < window_length_; ++i) in_[i] *= window_[i];
    for (int i = window_length_; i < fft_size_; ++i) in_[i] = 0.0;
    fftw_execute(plan_);
    const int bins = fft_size_ / 2 + 1;
    power_.resize(bins);
    for (int k = 0; k < bins; ++k) {
      power_[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
    for (int m = 0; m < cfg_.num_mels; ++m) {
      double energy = 0.0;
      const auto& w = mel_weights_[m];
      for (size_t j = 0; j < w.size(); ++j) {
        energy += w[j] * power_[mel_first_bin_[m] + j];
      }
      out[m] = static_cast<float>(std::log(std::max(energy, cfg_.log_floor)));
    }
  }

  // Center frequency in Hz of mel bin m.
  double MelCenterHz(int m) const { return mel_center_hz_[m]; }

 private:
  void BuildMelBanks() {
    const double nyquist = 0.5 * cfg_.sample_rate;
    const double high =
        cfg_.high_freq > 0.0 ? cfg_.high_freq : nyquist + cfg_.high_freq;
    if (cfg_.low_freq < 0.0 || high <= cfg_.low_freq || high > nyquist) {
      throw Error(ErrorCode::kInvalidConfig, "bad mel frequency bounds");
    }
    const double mel_low = internal::MelScale(cfg_.low_freq);
    const double mel_high = internal::MelScale(high);
    const double delta = (mel_high - mel_low) / (cfg_.num_mels + 1);
    const int num_bins = fft_size_ / 2;
    const double bin_hz = static_cast<double>(cfg_.sample_rate) / fft_size_;
    mel_weights_.assign(cfg_.num_mels, {});
    mel_first_bin_.assign(cfg_.num_mels, 0);
    mel_center_hz_.assign(cfg_.num_mels, 0.0);
    for (int m = 0; m < cfg_.num_mels; ++m) {
      const double left = mel_low + m * delta;
      const double center = left + delta;
      const double right = center + delta;
      mel_center_hz_[m] = 700.0 * (std::exp(center / 1127.0) - 1.0);
      int first = -1;
      std::vector<double> weights;
      for (int k = 0; k < num_bins; ++k) {
        const double mel = internal::MelScale(bin_hz * k);
        if (mel <= left || mel >= right) {
          if (first >= 0) break;
          continue;
        }
        const double w = mel <= center ? (mel - left) / (center - left)
                                       : (right - mel) / (right - center);
        if (first < 0) first = k;
        weights.push_back(w);
      }
      if (first < 0) {
        throw Error(ErrorCode::kInvalidConfig,
                    "mel bin " + std::to_string(m) + " covers no FFT bins");
      }
      mel_first_bin_[m] = first;
      mel_weights_[m] = std::move(weights);
    }
  }

  FeatureConfig cfg_;
  int window_length_ = 0;
  int fft_size_ = 0;
  std::vector<double> window_;
  std::vector<std::vector<double>> mel_weights_;
  std::vector<int> mel_first_bin_;
  std::vector<double> mel_center_hz_;
  std::vector<double> power_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

inline FeatureMatrix Fbank(const AudioClip& clip, const FeatureConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw Error(ErrorCode::kSampleRateMismatch,
                "clip at " + std::to_string(clip.sample_rate) +
                    " Hz, features expect " + std::to_string(cfg.sample_rate));
  }
  const int64_t frames = cfg.NumFrames(static_cast<int64_t>(clip.size()));
  if (frames < 1) {
    throw Error(ErrorCode::kTooShort,
                std::to_string(clip.size()) + " samples < one window");
  }
  FbankComputer computer(cfg);
  FeatureMatrix feat;
  feat.frames = frames;
  feat.dims = cfg.num_mels;
  feat.frame_shift_ms = cfg.shift_ms;
  feat.values.resize(static_cast<size_t>(frames) * cfg.num_mels);
  const int shift = cfg.shift_samples();
  for (int64_t t = 0; t < frames; ++t) {
    computer.ComputeFrame(clip.samples.data() + t * shift, feat.row(t));
  }
  return feat;
}

struct CmvnStats {
  std::vector<double> mean;
  std::vector<double> inv_stddev;
  int64_t frame_count = 0;

  int dims() const { return static_cast<int>(mean.size()); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CmvnStats, mean, inv_stddev, frame_count)

// Streaming accumulator of per-dimension first and second moments.
class CmvnAccumulator {
 public:
  void Accumulate(const FeatureMatrix& feat) {
    if (sum_.empty()) {
      sum_.assign(feat.dims, 0.0);
      sum_sq_.assign(feat.dims, 0.0);
    } else if (static_cast<int>(sum_.size()) != feat.dims) {
      throw Error(ErrorCode::kDimensionMismatch, "cmvn accumulator dims");
    }
    for (int64_t t = 0; t < feat.frames; ++t) {
      const float* row = feat.row(t);
      for (int d = 0; d < feat.dims; ++d) {
        const double v = row[d];
        sum_[d] += v;
        sum_sq_[d] += v * v;
      }
    }
    count_ += feat.frames;
  }

  CmvnStats Finish() const {
    if (count_ < 2) {
      throw Error(ErrorCode::kInvalidConfig,
                  "cmvn needs at least 2 frames, got " +
                      std::to_string(count_));
    }
    CmvnStats stats;
    stats.frame_count = count_;
    const size_t dims = sum_.size();
    stats.mean.resize(dims);
    stats.inv_stddev.resize(dims);
    const auto n = static_cast<double>(count_);
    for (size_t d = 0; d < dims; ++d) {
      const double mean = sum_[d] / n;
      const double var = std::max(0.0, sum_sq_[d] / n - mean * mean);
      stats.mean[d] = mean;
      stats.inv_stddev[d] = 1.0 / std::max(std::sqrt(var), 1e-6);
    }
    return stats;
  }

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  int64_t count_ = 0;
};

inline FeatureMatrix ApplyCmvn(const FeatureMatrix& feat,
                               const CmvnStats& stats) {
  if (feat.dims != stats.dims()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "features have " + std::to_string(feat.dims) +
                    " dims, cmvn has " + std::to_string(stats.dims()));
  }
  FeatureMatrix out = feat;
  for (int64_t t = 0; t < feat.frames; ++t) {
    float* row = out.row(t);
    for (int d = 0; d < feat.dims; ++d) {
      row[d] = static_cast<float>((row[d] - stats.mean[d]) *
                                  stats.inv_stddev[d]);
    }
  }
  return out;
}

struct SpecAugmentPolicy {
  int num_time_masks = 2;
  int max_time_width = 50;
  int num_freq_masks = 2;
  int max_freq_width = 10;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SpecAugmentPolicy, num_time_masks,
                                   max_time_width, num_freq_masks,
                                   max_freq_width)

inline void MaskTime(FeatureMatrix* feat, int64_t start, int64_t width) {
  for (int64_t t = start; t < start + width && t < feat->frames; ++t) {
    std::fill_n(feat->row(t), feat->dims, 0.0f);
  }
}

inline void MaskFreq(FeatureMatrix* feat, int start, int width) {
  for (int64_t t = 0; t < feat->frames; ++t) {
    for (int d = start; d < start + width && d < feat->dims; ++d) {
      feat->at(t, d) = 0.0f;
    }
  }
}

// Masks of width uniform{0..max} at a uniformly drawn start. Widths larger
// than the axis are clamped to the axis extent.
inline FeatureMatrix SpecAugment(const FeatureMatrix& feat,
                                 const SpecAugmentPolicy& policy,
                                 uint64_t seed) {
  FeatureMatrix out = feat;
  std::mt19937_64 rng(seed);
  const int64_t max_t = std::min<int64_t>(policy.max_time_width, feat.frames);
  for (int i = 0; i < policy.num_time_masks && max_t > 0; ++i) {
    const int64_t width = UniformInt(rng, 0, max_t);
    const int64_t start = UniformInt(rng, 0, feat.frames - width);
    MaskTime(&out, start, width);
  }
  const int max_f = std::min(policy.max_freq_width, feat.dims);
  for (int i = 0; i < policy.num_freq_masks && max_f > 0; ++i) {
    const auto width = static_cast<int>(UniformInt(rng, 0, max_f));
    const auto start = static_cast<int>(UniformInt(rng, 0, feat.dims - width));
    MaskFreq(&out, start, width);
  }
  return out;
}

}  // namespace kws

#endif  // KWS_FEATURES_H_
