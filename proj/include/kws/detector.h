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

#ifndef KWS_DETECTOR_H_
#define KWS_DETECTOR_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/container.h"
#include "kws/features.h"
#include "kws/model.h"
#include "kws/nn/ops.h"

namespace kws {

// Symmetric per-tensor int8: q = round(w / scale) clamped to [-127, 127],
// scale = max|w| / 127, or 1 for an all-zero tensor.
inline float QuantizeTensor(std::span<const float> w, std::vector<int8_t>* q) {
  float max_abs = 0.0f;
  for (float v : w) max_abs = std::max(max_abs, std::fabs(v));
  const float scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
  q->resize(w.size());
  for (size_t i = 0; i < w.size(); ++i) {
    const float r = std::nearbyint(w[i] / scale);
    (*q)[i] = static_cast<int8_t>(std::clamp(r, -127.0f, 127.0f));
  }
  return scale;
}

// Folded model whose weight tensors hold int8 codes (stored as float so the
// float kernels run on them unchanged) plus one scale per weight tensor.
// Biases and the CMVN stay in float; activations are never quantized.
struct QuantizedModel {
  KwsModel<float> model;
  std::map<std::string, float> scales;
  std::vector<double> thresholds;

  bool quantized(const std::string& name) const { return scales.count(name); }
  float scale(const std::string& name) const {
    auto it = scales.find(name);
    return it == scales.end() ? 1.0f : it->second;
  }
  // Real-valued weights the codes stand for.
  nn::Tensor<float> Dequantized(const std::string& name) const {
    nn::Tensor<float> t = model.param(name).value();
    const float s = scale(name);
    for (auto& v : t.data) v *= s;
    return t;
  }
};

inline bool IsWeightTensor(const std::string& name) {
  return name.ends_with(".weight");
}

inline QuantizedModel Quantize(const KwsModel<float>& model,
                               std::vector<double> thresholds = {}) {
  QuantizedModel q;
  q.model = model.config.folded ? model : FoldInference(model);
  q.thresholds = std::move(thresholds);
  if (q.thresholds.empty()) q.thresholds.assign(model.config.num_keywords, 0.5);
  for (auto& p : q.model.params) {
    if (!IsWeightTensor(p.name)) continue;
    std::vector<int8_t> codes;
    q.scales[p.name] = QuantizeTensor(p.value().data, &codes);
    p.value().data.assign(codes.begin(), codes.end());
  }
  return q;
}

inline Container QuantizedToContainer(const QuantizedModel& q) {
  Container c;
  c.metadata = ModelMetadata(q.model, q.thresholds, true);
  c.metadata["extra"] = nlohmann::json::object();
  for (const auto& p : q.model.params) {
    ContainerTensor t = F32Tensor(p.name, p.value());
    if (q.quantized(p.name)) {
      t.dtype = DType::kI8;
      t.i8.assign(t.f32.begin(), t.f32.end());
      t.f32.clear();
      t.scale = q.scale(p.name);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

inline QuantizedModel QuantizedFromContainer(const Container& c) {
  if (!c.metadata.value("quantized", false)) {
    throw Error(ErrorCode::kBadContainer, "container holds a float model");
  }
  const ModelFile file = ModelFileFromContainer(c);
  QuantizedModel q;
  q.model = file.model;
  q.thresholds = file.thresholds;
  for (const auto& t : c.tensors) {
    if (t.dtype == DType::kI8) q.scales[t.name] = t.scale;
  }
  return q;
}

inline void SaveQuantized(const std::string& path, const QuantizedModel& q) {
  SaveContainer(path, QuantizedToContainer(q));
}

inline QuantizedModel LoadQuantized(const std::string& path) {
  return QuantizedFromContainer(LoadContainer(path));
}

struct Detection {
  int keyword = 0;
  int64_t frame = 0;  // 0-based emission frame
  double time_ms = 0.0;
  float score = 0.0f;
};

struct DetectorConfig {
  std::vector<double> thresholds;  // per keyword; empty means 0.5 each
  double refractory_ms = 1000.0;
};

// Fires on the first frame at or above threshold, then ignores the keyword
// for refractory_frames frames (the firing frame included).
class Debouncer {
 public:
  Debouncer() = default;
  Debouncer(std::vector<double> thresholds, int64_t refractory_frames)
      : thresholds_(std::move(thresholds)),
        refractory_(refractory_frames),
        until_(thresholds_.size(), 0) {}

  bool Step(int keyword, int64_t frame, float score) {
    if (frame < until_[keyword] || score < thresholds_[keyword]) return false;
    until_[keyword] = frame + refractory_;
    return true;
  }
  void Reset() { std::fill(until_.begin(), until_.end(), 0); }
  const std::vector<double>& thresholds() const { return thresholds_; }

 private:
  std::vector<double> thresholds_;
  int64_t refractory_ = 0;
  std::vector<int64_t> until_;
};

// Detections over a complete posterior sequence, as a stream would fire.
inline std::vector<Detection> FireDetections(const PosteriorSequence& post,
                                             const std::vector<double>& thresholds,
                                             int64_t refractory_frames,
                                             double window_ms = 0.0) {
  Debouncer deb(thresholds, refractory_frames);
  std::vector<Detection> out;
  for (int64_t t = 0; t < post.frames; ++t) {
    for (int k = 0; k < post.num_keywords; ++k) {
      if (deb.Step(k, t, post.at(t, k))) {
        out.push_back({k, t, t * post.frame_shift_ms + window_ms, post.at(t, k)});
      }
    }
  }
  return out;
}

// Read-only network program shared by any number of streams. Built from a
// float model (folded on the way in) or from a quantized one.
class StreamModel {
 public:
  explicit StreamModel(const KwsModel<float>& model)
      : model_(model.config.folded ? model : FoldInference(model)) {
    Init();
  }
  explicit StreamModel(const QuantizedModel& q)
      : model_(q.model), scales_(q.scales) {
    Init();
  }

  const ModelConfig& config() const { return model_.config; }
  const Architecture& arch() const { return model_.arch; }
  int num_keywords() const { return model_.config.num_keywords; }
  const std::vector<int64_t>& cache_sizes() const { return cache_sizes_; }

  // features: [n x input_dim] raw fbank rows; caches: one [context x C]
  // buffer per conv layer, updated in place. Returns [n x K] posteriors.
  std::vector<float> Run(const float* features, int64_t n,
                         std::vector<std::vector<float>>* caches) const {
    using nn::MakeVar;
    using nn::Tensor;
    const int64_t D = model_.config.input_dim;
    Tensor<float> in({1, n, D});
    std::copy(features, features + n * D, in.data.begin());
    auto x = nn::FrameAffine<float>(nullptr, MakeVar(std::move(in)),
                                    model_.cmvn.mean, model_.cmvn.inv_stddev);
    x = Dense(x, "proj");
    nn::Var<float> taps;
    size_t conv_index = 0;
    for (const auto& stack : model_.arch.stacks) {
      for (const auto& block : stack) {
        nn::Var<float> y = x;
        for (const auto& l : block.layers) {
          if (l.kind == LayerSpec::Kind::kConv) {
            y = Conv(y, l, &(*caches)[conv_index++]);
          } else if (l.kind == LayerSpec::Kind::kRelu) {
            y = nn::Relu<float>(nullptr, y);
          } else {
            throw Error(ErrorCode::kInvalidConfig, "unfolded norm layer");
          }
        }
        x = block.residual ? nn::Add<float>(nullptr, x, y) : y;
      }
      if (model_.arch.sum_stack_outputs) {
        taps = taps ? nn::Add<float>(nullptr, taps, x) : x;
      }
    }
    if (taps) x = taps;
    const int K = num_keywords();
    std::vector<nn::Parameter<float>*> w, b;
    for (int k = 0; k < K; ++k) {
      w.push_back(&Param("head." + std::to_string(k) + ".weight"));
      b.push_back(scales_.empty() ? &Param("head." + std::to_string(k) + ".bias")
                                  : &zero_bias_);
    }
    auto z = nn::Heads<float>(nullptr, x, w, b);
    if (!scales_.empty()) {
      for (int64_t t = 0; t < n; ++t) {
        for (int k = 0; k < K; ++k) {
          const std::string p = "head." + std::to_string(k);
          float& v = z->value.data[t * K + k];
          v = v * Scale(p + ".weight") + Param(p + ".bias").value().data[0];
        }
      }
    }
    const auto post = nn::Sigmoid<float>(nullptr, z);
    return {post->value.data.begin(), post->value.data.end()};
  }

 private:
  void Init() {
    if (!model_.config.folded) {
      throw Error(ErrorCode::kInvalidConfig, "stream model must be folded");
    }
    cache_sizes_ = model_.CacheSizes();
    zero_bias_ = {"zero_bias", nn::MakeVar(nn::Tensor<float>({1})), false};
  }

  // Inference ops only read parameter values; the non-const reference they
  // take is an artifact of the training signature.
  nn::Parameter<float>& Param(const std::string& name) const {
    return const_cast<KwsModel<float>&>(model_).param(name);
  }
  float Scale(const std::string& name) const {
    auto it = scales_.find(name);
    return it == scales_.end() ? 1.0f : it->second;
  }

  // y = s * (x Q) + b for quantized weights, x W + b otherwise.
  nn::Var<float> Dense(const nn::Var<float>& x, const std::string& p) const {
    auto& w = Param(p + ".weight");
    auto& b = Param(p + ".bias");
    if (scales_.empty()) return nn::Linear<float>(nullptr, x, w, &b);
    auto y = nn::Linear<float>(nullptr, x, w, nullptr);
    ScaleAndBias(y->value, Scale(p + ".weight"), b.value());
    return y;
  }

  static void ScaleAndBias(nn::Tensor<float>& y, float scale,
                           const nn::Tensor<float>& bias) {
    const size_t C = bias.numel();
    for (size_t i = 0; i < y.numel(); ++i) {
      y.data[i] = y.data[i] * scale + bias.data[i % C];
    }
  }

  // Causal conv over the cached context followed by the n new frames; only
  // the n new output frames are computed.
  nn::Var<float> Conv(const nn::Var<float>& x, const LayerSpec& l,
                      std::vector<float>* cache) const {
    const auto& W = Param(l.name + ".weight").value();
    const auto& bias = Param(l.name + ".bias").value();
    const int64_t n = x->value.dim(1);
    const int64_t cin = l.in_channels, cout = l.out_channels;
    const int64_t ctx = l.geo.context();
    const int64_t K = l.geo.kernel, groups = l.geo.groups;
    const int64_t cin_pg = cin / groups, cout_pg = cout / groups;
    nn::AlignedVector<float> buf(static_cast<size_t>((ctx + n) * cin));
    std::copy(cache->begin(), cache->end(), buf.begin());
    std::copy(x->value.data.begin(), x->value.data.end(),
              buf.begin() + ctx * cin);
    auto y = nn::MakeVar(nn::Tensor<float>({1, n, cout}));
    float* Y = y->value.ptr();
    const bool quantized = !scales_.empty();
    if (!quantized) {
      for (int64_t t = 0; t < n; ++t) {
        std::copy(bias.data.begin(), bias.data.end(), Y + t * cout);
      }
    }
    const bool depthwise = cin_pg == 1 && cout_pg == 1;
    for (int64_t k = 0; k < K; ++k) {
      const int64_t s = l.geo.shift(k);
      const float* xs = buf.data() + (ctx - s) * cin;
      if (depthwise) {
        const float* wk = W.ptr() + k * cout;
        for (int64_t t = 0; t < n; ++t) {
          const float* xr = xs + t * cin;
          float* yr = Y + t * cout;
          for (int64_t c = 0; c < cout; ++c) yr[c] += wk[c] * xr[c];
        }
        continue;
      }
      for (int64_t g = 0; g < groups; ++g) {
        nn::Mat(Y + g * cout_pg, n, cout_pg, cout).noalias() +=
            nn::Mat(xs + g * cin_pg, n, cin_pg, cin) *
            nn::Mat(W.ptr() + k * cin_pg * cout + g * cout_pg, cin_pg, cout_pg,
                    cout);
      }
    }
    if (quantized) ScaleAndBias(y->value, Scale(l.name + ".weight"), bias);
    std::copy(buf.end() - ctx * cin, buf.end(), cache->begin());
    return y;
  }

  KwsModel<float> model_;
  std::map<std::string, float> scales_;
  std::vector<int64_t> cache_sizes_;
  mutable nn::Parameter<float> zero_bias_;
};

struct StreamOutput {
  PosteriorSequence posteriors;  // the frames completed by this call
  std::vector<Detection> detections;
};

// Everything one audio stream carries between calls. Its size does not grow
// with stream length.
class StreamState {
 public:
  StreamState(const StreamModel& model, DetectorConfig cfg = {})
      : feat_cfg_(model.config().features), fbank_(feat_cfg_) {
    if (cfg.thresholds.empty()) cfg.thresholds.assign(model.num_keywords(), 0.5);
    if (static_cast<int>(cfg.thresholds.size()) != model.num_keywords()) {
      throw Error(ErrorCode::kInvalidConfig, "one threshold per keyword");
    }
    refractory_frames_ =
        std::llround(cfg.refractory_ms / model.config().features.shift_ms);
    debouncer_ = Debouncer(cfg.thresholds, refractory_frames_);
    for (size_t i = 0; i < model.cache_sizes().size(); ++i) {
      caches_.emplace_back(model.cache_sizes()[i] *
                           model.arch().ConvLayers()[i]->in_channels);
    }
    Reset();
  }

  void Reset() {
    for (auto& c : caches_) std::fill(c.begin(), c.end(), 0.0f);
    remainder_.clear();
    frames_emitted_ = 0;
    debouncer_.Reset();
  }

  int64_t frames_emitted() const { return frames_emitted_; }
  size_t remainder_samples() const { return remainder_.size(); }
  const std::vector<std::vector<float>>& caches() const { return caches_; }
  int64_t refractory_frames() const { return refractory_frames_; }

  // Floats held between calls (caches plus at most one window of samples).
  size_t StateFloats() const {
    size_t n = remainder_.size();
    for (const auto& c : caches_) n += c.size();
    return n;
  }

  StreamOutput Push(const StreamModel& model, const float* samples, size_t n,
                    int sample_rate) {
    if (sample_rate != feat_cfg_.sample_rate) {
      throw Error(ErrorCode::kSampleRateMismatch,
                  "stream at " + std::to_string(sample_rate) +
                      " Hz, model expects " +
                      std::to_string(feat_cfg_.sample_rate));
    }
    remainder_.insert(remainder_.end(), samples, samples + n);
    const int64_t frames =
        feat_cfg_.NumFrames(static_cast<int64_t>(remainder_.size()));
    const int D = feat_cfg_.num_mels;
    const int shift = feat_cfg_.shift_samples();
    std::vector<float> feats(static_cast<size_t>(frames) * D);
    for (int64_t t = 0; t < frames; ++t) {
      fbank_.ComputeFrame(remainder_.data() + t * shift, feats.data() + t * D);
    }
    remainder_.erase(remainder_.begin(), remainder_.begin() + frames * shift);
    StreamOutput out;
    out.posteriors.num_keywords = model.num_keywords();
    out.posteriors.frame_shift_ms = feat_cfg_.shift_ms;
    if (frames == 0) return out;
    out.posteriors.frames = frames;
    out.posteriors.values = model.Run(feats.data(), frames, &caches_);
    for (int64_t t = 0; t < frames; ++t) {
      const int64_t frame = frames_emitted_ + t;
      for (int k = 0; k < model.num_keywords(); ++k) {
        const float p = out.posteriors.at(t, k);
        if (debouncer_.Step(k, frame, p)) {
          out.detections.push_back(
              {k, frame, frame * feat_cfg_.shift_ms + feat_cfg_.window_ms, p});
        }
      }
    }
    frames_emitted_ += frames;
    return out;
  }

  StreamOutput Push(const StreamModel& model, const std::vector<float>& samples,
                    int sample_rate) {
    return Push(model, samples.data(), samples.size(), sample_rate);
  }

 private:
  FeatureConfig feat_cfg_;
  FbankComputer fbank_;
  std::vector<std::vector<float>> caches_;
  std::vector<float> remainder_;
  int64_t frames_emitted_ = 0;
  int64_t refractory_frames_ = 0;
  Debouncer debouncer_;
};

// Streams a whole clip through in chunks of chunk_samples (0 = one call)
// and concatenates the outputs.
inline StreamOutput StreamClip(const StreamModel& model, const AudioClip& clip,
                               size_t chunk_samples = 0,
                               DetectorConfig cfg = {}) {
  StreamState state(model, std::move(cfg));
  StreamOutput all;
  all.posteriors.num_keywords = model.num_keywords();
  all.posteriors.frame_shift_ms = model.config().features.shift_ms;
  const size_t step = chunk_samples ? chunk_samples : std::max<size_t>(clip.size(), 1);
  for (size_t i = 0; i < clip.size(); i += step) {
    const size_t n = std::min(step, clip.size() - i);
    auto out = state.Push(model, clip.samples.data() + i, n, clip.sample_rate);
    all.posteriors.frames += out.posteriors.frames;
    all.posteriors.values.insert(all.posteriors.values.end(),
                                 out.posteriors.values.begin(),
                                 out.posteriors.values.end());
    all.detections.insert(all.detections.end(), out.detections.begin(),
                          out.detections.end());
  }
  return all;
}

inline nlohmann::json ToJson(const Detection& d) {
  return {{"keyword", d.keyword}, {"time_ms", d.time_ms}, {"score", d.score}};
}

}  // namespace kws

#endif  // KWS_DETECTOR_H_
