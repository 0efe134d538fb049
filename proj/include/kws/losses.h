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


#ifndef KWS_LOSSES_H_
#define KWS_LOSSES_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/dataio.h"
#include "kws/nn/ops.h"
#include "kws/nn/tensor.h"

namespace kws {

enum class LossKind { kMaxPooling, kVadMean, kVadMax, kWeaklyConstraint };

NLOHMANN_JSON_SERIALIZE_ENUM(LossKind,
                             {{LossKind::kMaxPooling, "max_pooling"},
                              {LossKind::kVadMean, "vad_mean"},
                              {LossKind::kVadMax, "vad_max"},
                              {LossKind::kWeaklyConstraint,
                               "weakly_constraint"}})

struct LossConfig {
  LossKind kind = LossKind::kMaxPooling;
  int64_t min_duration_frames = 0;  // m
  int64_t vad_mean_interval = 5;
  int64_t vad_max_range = 40;
  int constraint_epochs = 5;

  void Validate() const {
    if (min_duration_frames < 0 || vad_mean_interval < 1 ||
        vad_max_range < 1 || constraint_epochs < 0) {
      throw Error(ErrorCode::kInvalidConfig, "bad loss config");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, kind,
                                                min_duration_frames,
                                                vad_mean_interval,
                                                vad_max_range,
                                                constraint_epochs)

// Targets for one mini-batch; frame indices in end_frames are 1-based.
struct LossTargets {
  std::vector<int> labels;
  std::vector<int64_t> lengths;
  std::vector<std::optional<int64_t>> end_frames;

  static LossTargets FromBatch(const Batch& b) {
    return {b.labels, b.lengths, b.end_frames};
  }
};

template <typename T>
struct LossResult {
  nn::Var<T> loss;                    // scalar mean over utterances
  double value = 0.0;
  std::vector<double> per_utterance;  // summed over heads
  // 1-based frame j* picked for the positive head, -1 for negatives.
  std::vector<int64_t> selected_frame;
};

namespace internal {

inline double ClampPosterior(double p) {
  return std::clamp(p, 1e-8, 1.0 - 1e-8);
}

struct GradEntry {
  size_t index;  // flat offset into the posterior tensor
  double grad;
};

// Positive windows are half-open [lo, hi) in 0-based frames.
struct Window {
  int64_t lo = 0;
  int64_t hi = 0;
};

// Window rule for the positive head of utterance b.
enum class PositiveRule { kMax, kMean };

template <typename T>
LossResult<T> WindowedLoss(
    nn::Tape<T>* tape, const nn::Var<T>& posteriors, const LossTargets& tgt,
    PositiveRule rule,
    const std::function<Window(size_t b, int64_t length)>& positive_window) {
  const auto& shape = posteriors->value.shape;
  if (shape.size() != 3) {
    throw Error(ErrorCode::kDimensionMismatch,
                "posteriors must be [B x T x K]");
  }
  const int64_t B = shape[0], Tm = shape[1], K = shape[2];
  if (B == 0) throw Error(ErrorCode::kEmptyBatch, "loss on empty batch");
  if (static_cast<int64_t>(tgt.labels.size()) != B ||
      static_cast<int64_t>(tgt.lengths.size()) != B) {
    throw Error(ErrorCode::kDimensionMismatch, "targets vs batch size");
  }
  const T* P = posteriors->value.ptr();
  auto at = [&](int64_t b, int64_t t, int64_t k) {
    return static_cast<size_t>((b * Tm + t) * K + k);
  };
  LossResult<T> res;
  res.per_utterance.assign(B, 0.0);
  res.selected_frame.assign(B, -1);
  std::vector<GradEntry> grads;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (int64_t b = 0; b < B; ++b) {
    const int64_t n = tgt.lengths[b];
    const int label = tgt.labels[b];
    if (n < 1 || n > Tm) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "length " + std::to_string(n) + " outside [1, " +
                      std::to_string(Tm) + "]");
    }
    if (label >= K) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "label " + std::to_string(label) + " but only " +
                      std::to_string(K) + " heads");
    }
    for (int64_t k = 0; k < K; ++k) {
      if (k == label) {
        const Window w = positive_window(b, n);
        if (rule == PositiveRule::kMax) {
          int64_t best = w.lo;
          for (int64_t t = w.lo + 1; t < w.hi; ++t) {
            if (P[at(b, t, k)] > P[at(b, best, k)]) best = t;
          }
          const double raw = P[at(b, best, k)];
          const double p = ClampPosterior(raw);
          res.per_utterance[b] += -std::log(p);
          res.selected_frame[b] = best + 1;
          if (p == raw) grads.push_back({at(b, best, k), -inv_b / p});
        } else {
          double sum = 0.0;
          for (int64_t t = w.lo; t < w.hi; ++t) sum += P[at(b, t, k)];
          const auto count = static_cast<double>(w.hi - w.lo);
          const double raw = sum / count;
          const double p = ClampPosterior(raw);
          res.per_utterance[b] += -std::log(p);
          res.selected_frame[b] = w.hi;
          if (p == raw) {
            for (int64_t t = w.lo; t < w.hi; ++t) {
              grads.push_back({at(b, t, k), -inv_b / (p * count)});
            }
          }
        }
      } else {
        int64_t best = 0;
        for (int64_t t = 1; t < n; ++t) {
          if (P[at(b, t, k)] > P[at(b, best, k)]) best = t;
        }
        const double raw = P[at(b, best, k)];
        const double p = ClampPosterior(raw);
        res.per_utterance[b] += -std::log(1.0 - p);
        if (p == raw) grads.push_back({at(b, best, k), inv_b / (1.0 - p)});
      }
    }
  }
  double total = 0.0;
  for (double v : res.per_utterance) total += v;
  res.value = total * inv_b;
  res.loss = nn::MakeVar(nn::Tensor<T>({1}, static_cast<T>(res.value)));
  if (tape) {
    res.loss->recorded = true;
    if (posteriors->requires_grad) {
      res.loss->requires_grad = true;
      auto out = res.loss;
      tape->Record([posteriors, out, grads = std::move(grads)] {
        const T g = out->Grad().data[0];
        T* dp = posteriors->Grad().ptr();
        for (const auto& e : grads) dp[e.index] += static_cast<T>(g * e.grad);
      });
    }
  }
  return res;
}

inline int64_t RequireEndFrame(const LossTargets& tgt, size_t b) {
  if (!tgt.end_frames.size() || !tgt.end_frames[b]) {
    throw Error(ErrorCode::kMissingEndFrame,
                "positive utterance " + std::to_string(b) +
                    " has no end_frame");
  }
  return *tgt.end_frames[b];
}

// 1-based frames [end - width + 1, end] clipped to [1, n], as 0-based [lo, hi).
inline Window EndAnchoredWindow(int64_t end, int64_t width, int64_t n) {
  const int64_t last = std::clamp<int64_t>(end, 1, n);
  const int64_t first = std::clamp<int64_t>(end - width + 1, 1, last);
  return {first - 1, last};
}

}  // namespace internal

// Positive head: p* = max over 1-based frames m+1..N; other heads and all
// heads of negatives: p* = max over 1..N. Per head -ln p* or -ln(1 - p*).
template <typename T>
LossResult<T> MaxPoolingLoss(nn::Tape<T>* tape, const nn::Var<T>& posteriors,
                             const LossTargets& tgt, int64_t min_duration) {
  if (min_duration < 0) {
    throw Error(ErrorCode::kInvalidConfig, "min duration must be >= 0");
  }
  for (size_t b = 0; b < tgt.labels.size(); ++b) {
    if (tgt.labels[b] >= 0 && min_duration >= tgt.lengths[b]) {
      throw Error(ErrorCode::kMinDurationTooLarge,
                  "m = " + std::to_string(min_duration) +
                      " but a positive has " + std::to_string(tgt.lengths[b]) +
                      " frames");
    }
  }
  return internal::WindowedLoss<T>(
      tape, posteriors, tgt, internal::PositiveRule::kMax,
      [min_duration](size_t, int64_t n) {
        return internal::Window{min_duration, n};
      });
}

template <typename T>
LossResult<T> VadMeanLoss(nn::Tape<T>* tape, const nn::Var<T>& posteriors,
                          const LossTargets& tgt, int64_t interval = 5) {
  return internal::WindowedLoss<T>(
      tape, posteriors, tgt, internal::PositiveRule::kMean,
      [&tgt, interval](size_t b, int64_t n) {
        return internal::EndAnchoredWindow(internal::RequireEndFrame(tgt, b),
                                           interval, n);
      });
}

template <typename T>
LossResult<T> VadMaxLoss(nn::Tape<T>* tape, const nn::Var<T>& posteriors,
                         const LossTargets& tgt, int64_t range = 40) {
  return internal::WindowedLoss<T>(
      tape, posteriors, tgt, internal::PositiveRule::kMax,
      [&tgt, range](size_t b, int64_t n) {
        return internal::EndAnchoredWindow(internal::RequireEndFrame(tgt, b),
                                           range, n);
      });
}

// vad_max while epoch <= constraint_epochs (epochs are 1-based), then
// max-pooling with the configured minimum duration.
template <typename T>
LossResult<T> WeaklyConstraintLoss(nn::Tape<T>* tape,
                                   const nn::Var<T>& posteriors,
                                   const LossTargets& tgt, int epoch,
                                   const LossConfig& cfg) {
  if (epoch <= cfg.constraint_epochs) {
    return VadMaxLoss(tape, posteriors, tgt, cfg.vad_max_range);
  }
  return MaxPoolingLoss(tape, posteriors, tgt, cfg.min_duration_frames);
}

template <typename T>
LossResult<T> ComputeLoss(nn::Tape<T>* tape, const nn::Var<T>& posteriors,
                          const LossTargets& tgt, const LossConfig& cfg,
                          int epoch) {
  cfg.Validate();
  switch (cfg.kind) {
    case LossKind::kMaxPooling:
      return MaxPoolingLoss(tape, posteriors, tgt, cfg.min_duration_frames);
    case LossKind::kVadMean:
      return VadMeanLoss(tape, posteriors, tgt, cfg.vad_mean_interval);
    case LossKind::kVadMax:
      return VadMaxLoss(tape, posteriors, tgt, cfg.vad_max_range);
    case LossKind::kWeaklyConstraint:
      return WeaklyConstraintLoss(tape, posteriors, tgt, epoch, cfg);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown loss kind");
}

// Nearest-rank quantile: the ceil(q * n)-th smallest value (at least the 1st).
inline int64_t NearestRankQuantile(std::vector<int64_t> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kNoPositives, "empty sample");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<int64_t>(values.size());
  int64_t rank = static_cast<int64_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<int64_t>(rank, 1, n);
  return values[rank - 1];
}

inline int64_t MinDurationFromLengths(const std::vector<int64_t>& lengths,
                                      double quantile = 0.05,
                                      double scale = 0.5) {
  if (lengths.empty()) {
    throw Error(ErrorCode::kNoPositives, "no positive utterances");
  }
  return static_cast<int64_t>(
      std::floor(scale * static_cast<double>(NearestRankQuantile(lengths, quantile))));
}

// m = floor(scale * nearest-rank quantile of positive utterance frame counts).
// Uses duration_frames when cached in the manifest, else reads the audio.
inline int64_t EstimateMinDuration(const std::vector<ManifestEntry>& entries,
                                   const FeatureConfig& cfg,
                                   double quantile = 0.05, double scale = 0.5,
                                   const AudioCache* cache = nullptr) {
  std::vector<int64_t> lengths;
  for (const auto& e : entries) {
    if (e.label < 0) continue;
    if (e.duration_frames) {
      lengths.push_back(*e.duration_frames);
      continue;
    }
    AudioClip clip = cache && cache->Find(e.wav) ? *cache->Find(e.wav)
                                                 : ReadWav(e.wav);
    clip = Resample(clip, cfg.sample_rate);
    lengths.push_back(cfg.NumFrames(static_cast<int64_t>(clip.size())));
  }
  return MinDurationFromLengths(lengths, quantile, scale);
}

}  // namespace kws

#endif  // KWS_LOSSES_H_
