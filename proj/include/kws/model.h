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


#ifndef KWS_MODEL_H_
#define KWS_MODEL_H_

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/dataio.h"
#include "kws/features.h"
#include "kws/nn/ops.h"
#include "kws/nn/tensor.h"

namespace kws {

enum class BackboneKind { kTcn, kDsTcn, kGdsTcn, kMdtc };

NLOHMANN_JSON_SERIALIZE_ENUM(BackboneKind, {{BackboneKind::kTcn, "tcn"},
                                            {BackboneKind::kDsTcn, "ds_tcn"},
                                            {BackboneKind::kGdsTcn, "gds_tcn"},
                                            {BackboneKind::kMdtc, "mdtc"}})

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kDsTcn;
  int hidden_channels = 256;
  int kernel_size = 8;
  int num_layers = 4;          // per stack for MDTC
  std::vector<int> dilations;  // one per layer; empty means 1, 2, 4, ...
  int groups = 1;              // pointwise groups (GDSTCN)
  int mdtc_stacks = 4;
  double dropout = 0.0;

  std::vector<int> ResolvedDilations() const {
    if (!dilations.empty()) return dilations;
    std::vector<int> d;
    for (int i = 0; i < num_layers; ++i) d.push_back(1 << i);
    return d;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackboneConfig, kind,
                                                hidden_channels, kernel_size,
                                                num_layers, dilations, groups,
                                                mdtc_stacks, dropout)

// Documented default sizes. Parameter counts with K = 2 keywords:
//   TCN     256 ch, kernel 8, 4 layers             2,111,234
//   DS-TCN  256 ch, kernel 8, 4 layers               287,490
//   GDS-TCN 256 ch, kernel 8, 6 layers, 4 groups     130,818
//   MDTC    64 ch, kernel 5, 4 stacks x 4 layers     148,162
inline BackboneConfig DefaultBackbone(BackboneKind kind) {
  BackboneConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case BackboneKind::kTcn:
    case BackboneKind::kDsTcn:
      break;
    case BackboneKind::kGdsTcn:
      cfg.num_layers = 6;
      cfg.groups = 4;
      break;
    case BackboneKind::kMdtc:
      cfg.hidden_channels = 64;
      cfg.kernel_size = 5;
      cfg.num_layers = 4;
      cfg.mdtc_stacks = 4;
      break;
  }
  return cfg;
}

struct ModelConfig {
  BackboneConfig backbone;
  int input_dim = 40;
  int num_keywords = 1;
  std::vector<std::string> keywords;
  FeatureConfig features;
  bool folded = false;
  uint64_t init_seed = 777;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, backbone,
                                                input_dim, num_keywords,
                                                keywords, features, folded,
                                                init_seed)

// Layer program shared by the offline forward and the streaming runtime.
struct LayerSpec {
  enum class Kind { kConv, kNorm, kRelu };
  Kind kind = Kind::kRelu;
  std::string name;  // parameter prefix
  nn::ConvGeometry geo;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
};

struct BlockSpec {
  std::vector<LayerSpec> layers;
  bool residual = true;
};

struct Architecture {
  std::vector<std::vector<BlockSpec>> stacks;
  bool sum_stack_outputs = false;  // MDTC multi-scale taps
  int64_t hidden = 0;

  // 1 + sum over conv layers of (K - 1) * d.
  int64_t ReceptiveField() const {
    int64_t r = 1;
    for (const auto& c : ConvLayers()) r += c->geo.context();
    return r;
  }
  std::vector<const LayerSpec*> ConvLayers() const {
    std::vector<const LayerSpec*> out;
    for (const auto& stack : stacks) {
      for (const auto& block : stack) {
        for (const auto& l : block.layers) {
          if (l.kind == LayerSpec::Kind::kConv) out.push_back(&l);
        }
      }
    }
    return out;
  }
};

inline void ValidateConfig(const ModelConfig& cfg) {
  const auto& b = cfg.backbone;
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, what);
  };
  if (cfg.input_dim < 1) fail("input_dim must be >= 1");
  if (cfg.num_keywords < 1) fail("num_keywords must be >= 1");
  if (!cfg.keywords.empty() &&
      static_cast<int>(cfg.keywords.size()) != cfg.num_keywords) {
    fail("keyword names do not match num_keywords");
  }
  if (b.hidden_channels < 1 || b.kernel_size < 1 || b.num_layers < 1) {
    fail("backbone extents must be >= 1");
  }
  if (b.groups < 1 || b.hidden_channels % b.groups != 0) {
    fail("groups " + std::to_string(b.groups) + " must divide " +
         std::to_string(b.hidden_channels) + " channels");
  }
  if (b.kind != BackboneKind::kGdsTcn && b.groups != 1) {
    fail("groups only apply to gds_tcn");
  }
  if (b.kind == BackboneKind::kMdtc && b.mdtc_stacks < 1) {
    fail("mdtc_stacks must be >= 1");
  }
  if (!b.dilations.empty() &&
      static_cast<int>(b.dilations.size()) != b.num_layers) {
    fail("dilation schedule length must equal num_layers");
  }
  for (int d : b.ResolvedDilations()) {
    if (d < 1) fail("dilations must be >= 1");
  }
  if (b.dropout < 0.0 || b.dropout >= 1.0) fail("dropout must be in [0, 1)");
}

inline Architecture BuildArchitecture(const ModelConfig& cfg) {
  ValidateConfig(cfg);
  const auto& b = cfg.backbone;
  const int64_t H = b.hidden_channels;
  const auto dilations = b.ResolvedDilations();
  Architecture arch;
  arch.hidden = H;
  arch.sum_stack_outputs = b.kind == BackboneKind::kMdtc;
  const int stacks = b.kind == BackboneKind::kMdtc ? b.mdtc_stacks : 1;
  auto conv = [&](const std::string& name, int64_t k, int64_t d, int64_t g) {
    LayerSpec l;
    l.kind = LayerSpec::Kind::kConv;
    l.name = name;
    l.geo = {k, d, g};
    l.in_channels = H;
    l.out_channels = H;
    return l;
  };
  auto norm = [&](const std::string& name) {
    LayerSpec l;
    l.kind = LayerSpec::Kind::kNorm;
    l.name = name;
    l.in_channels = l.out_channels = H;
    return l;
  };
  const LayerSpec relu{LayerSpec::Kind::kRelu, "", {}, H, H};
  for (int s = 0; s < stacks; ++s) {
    std::vector<BlockSpec> blocks;
    for (int i = 0; i < b.num_layers; ++i) {
      const std::string p =
          "backbone.s" + std::to_string(s) + ".b" + std::to_string(i) + ".";
      const int64_t K = b.kernel_size;
      const int64_t d = dilations[i];
      BlockSpec block;
      auto& L = block.layers;
      switch (b.kind) {
        case BackboneKind::kTcn:
          L = {conv(p + "conv", K, d, 1), norm(p + "bn"), relu};
          break;
        case BackboneKind::kDsTcn:
        case BackboneKind::kGdsTcn:
          L = {conv(p + "dw", K, d, H), norm(p + "bn1"), relu,
               conv(p + "pw", 1, 1, b.groups), norm(p + "bn2"), relu};
          break;
        case BackboneKind::kMdtc:
          L = {conv(p + "dw", K, d, H), norm(p + "bn1"),
               conv(p + "pw", 1, 1, 1), norm(p + "bn2"), relu,
               conv(p + "pw2", 1, 1, 1), norm(p + "bn3"), relu};
          break;
      }
      if (cfg.folded) {
        std::erase_if(L, [](const LayerSpec& l) {
          return l.kind == LayerSpec::Kind::kNorm;
        });
      }
      blocks.push_back(std::move(block));
    }
    arch.stacks.push_back(std::move(blocks));
  }
  return arch;
}

// Row-major [frames x keywords] grid of posteriors in (0, 1).
struct PosteriorSequence {
  int64_t frames = 0;
  int num_keywords = 0;
  std::vector<float> values;
  double frame_shift_ms = 10.0;

  float at(int64_t t, int k) const { return values[t * num_keywords + k]; }
  float& at(int64_t t, int k) { return values[t * num_keywords + k]; }
};

template <typename T>
class KwsModel {
 public:
  ModelConfig config;
  CmvnStats cmvn;
  Architecture arch;
  std::vector<nn::Parameter<T>> params;

  // Conv layer executions since construction; the backbone runs once per
  // forward regardless of the number of heads.
  mutable int64_t conv_invocations = 0;

  KwsModel() = default;
  KwsModel(KwsModel&&) noexcept = default;
  KwsModel& operator=(KwsModel&&) noexcept = default;
  // Copies are deep: parameter storage is never shared between models.
  KwsModel(const KwsModel& other)
      : config(other.config), cmvn(other.cmvn), arch(other.arch) {
    for (const auto& p : other.params) {
      AddParam(p.name, p.value(), p.trainable);
    }
  }
  KwsModel& operator=(const KwsModel& other) {
    if (this != &other) *this = KwsModel(other);
    return *this;
  }

  nn::Parameter<T>& param(const std::string& name) {
    return params.at(IndexOf(name));
  }
  const nn::Parameter<T>& param(const std::string& name) const {
    return params.at(IndexOf(name));
  }
  bool has_param(const std::string& name) const {
    return index_.count(name) > 0;
  }

  void AddParam(const std::string& name, nn::Tensor<T> value, bool trainable) {
    if (index_.count(name)) {
      throw Error(ErrorCode::kInvalidConfig, "duplicate parameter " + name);
    }
    index_[name] = params.size();
    params.push_back({name, nn::MakeVar(std::move(value), trainable),
                      trainable});
  }

  std::vector<nn::Parameter<T>*> Trainable() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& p : params) {
      if (p.trainable) out.push_back(&p);
    }
    return out;
  }

  void ZeroGrad() {
    for (auto& p : params) p.var->ZeroGrad();
  }

  int64_t ReceptiveField() const { return arch.ReceptiveField(); }

  // Per conv layer, the number of past input frames a streaming cache keeps.
  std::vector<int64_t> CacheSizes() const {
    std::vector<int64_t> out;
    for (const auto* c : arch.ConvLayers()) out.push_back(c->geo.context());
    return out;
  }

  template <typename U>
  KwsModel<U> Cast() const {
    KwsModel<U> out;
    out.config = config;
    out.cmvn = cmvn;
    out.arch = arch;
    for (const auto& p : params) {
      out.AddParam(p.name, p.value().template Cast<U>(), p.trainable);
    }
    return out;
  }

 private:
  size_t IndexOf(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw Error(ErrorCode::kInvalidConfig, "no parameter " + name);
    }
    return it->second;
  }

  std::map<std::string, size_t> index_;
};

template <typename T>
int64_t CountParams(const KwsModel<T>& model) {
  int64_t n = 0;
  for (const auto& p : model.params) {
    if (p.trainable) n += static_cast<int64_t>(p.value().numel());
  }
  return n;
}

namespace internal {

// Kaiming-uniform with a = sqrt(5): bound = 1 / sqrt(fan_in).
template <typename T>
nn::Tensor<T> KaimingUniform(std::vector<int64_t> shape, int64_t fan_in,
                             std::mt19937_64& rng) {
  nn::Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>((2.0 * UniformReal(rng) - 1.0) * bound);
  return t;
}

}  // namespace internal

// Parameters are created, and randomly initialized, in a fixed order.
template <typename T>
KwsModel<T> BuildModel(const ModelConfig& cfg, const CmvnStats& cmvn) {
  KwsModel<T> model;
  model.config = cfg;
  if (model.config.keywords.empty()) {
    for (int k = 0; k < cfg.num_keywords; ++k) {
      model.config.keywords.push_back("kw" + std::to_string(k));
    }
  }
  model.arch = BuildArchitecture(model.config);
  if (cmvn.dims() != cfg.input_dim) {
    throw Error(ErrorCode::kInvalidConfig,
                "cmvn has " + std::to_string(cmvn.dims()) +
                    " dims, model input_dim " + std::to_string(cfg.input_dim));
  }
  model.cmvn = cmvn;
  std::mt19937_64 rng(cfg.init_seed);
  const int64_t H = model.arch.hidden;
  const int64_t D = cfg.input_dim;
  model.AddParam("proj.weight", internal::KaimingUniform<T>({D, H}, D, rng),
                 true);
  model.AddParam("proj.bias", nn::Tensor<T>({H}), true);
  for (const auto& stack : model.arch.stacks) {
    for (const auto& block : stack) {
      for (const auto& l : block.layers) {
        if (l.kind == LayerSpec::Kind::kConv) {
          const int64_t cin_pg = l.in_channels / l.geo.groups;
          model.AddParam(l.name + ".weight",
                         internal::KaimingUniform<T>(
                             {l.geo.kernel, cin_pg, l.out_channels},
                             cin_pg * l.geo.kernel, rng),
                         true);
          model.AddParam(l.name + ".bias", nn::Tensor<T>({l.out_channels}),
                         true);
        } else if (l.kind == LayerSpec::Kind::kNorm) {
          const int64_t C = l.out_channels;
          model.AddParam(l.name + ".gamma", nn::Tensor<T>({C}, T(1)), true);
          model.AddParam(l.name + ".beta", nn::Tensor<T>({C}), true);
          model.AddParam(l.name + ".running_mean", nn::Tensor<T>({C}), false);
          model.AddParam(l.name + ".running_var", nn::Tensor<T>({C}, T(1)),
                         false);
        }
      }
    }
  }
  for (int k = 0; k < cfg.num_keywords; ++k) {
    const std::string p = "head." + std::to_string(k);
    model.AddParam(p + ".weight", internal::KaimingUniform<T>({H, 1}, H, rng),
                   true);
    model.AddParam(p + ".bias", nn::Tensor<T>({1}), true);
  }
  return model;
}

struct ForwardOptions {
  bool train = false;
  uint64_t dropout_seed = 0;
};

// features: [B, T, input_dim] raw filter-bank values; returns [B, T, K]
// posteriors. Frames at t >= lengths[b] are computed but never meaningful.
template <typename T>
nn::Var<T> Forward(KwsModel<T>& model, nn::Tape<T>* tape,
                   const nn::Var<T>& features,
                   const std::vector<int64_t>& lengths,
                   const ForwardOptions& opt = {}) {
  const auto& fs = features->value.shape;
  if (fs.size() != 3 || fs[2] != model.config.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model expects [B x T x " +
                    std::to_string(model.config.input_dim) + "], got " +
                    nn::ShapeString(fs));
  }
  nn::Var<T> x =
      nn::FrameAffine(tape, features, model.cmvn.mean, model.cmvn.inv_stddev);
  x = nn::Linear(tape, x, model.param("proj.weight"), &model.param("proj.bias"));
  nn::Var<T> taps;
  nn::BatchNormOptions bn_opt;
  bn_opt.train = opt.train;
  uint64_t block_index = 0;
  for (const auto& stack : model.arch.stacks) {
    for (const auto& block : stack) {
      nn::Var<T> y = x;
      for (const auto& l : block.layers) {
        switch (l.kind) {
          case LayerSpec::Kind::kConv:
            ++model.conv_invocations;
            y = nn::CausalConv1d(tape, y, model.param(l.name + ".weight"),
                                 &model.param(l.name + ".bias"),
                                 l.geo.dilation, l.geo.groups);
            break;
          case LayerSpec::Kind::kNorm:
            y = nn::BatchNorm(tape, y, model.param(l.name + ".gamma"),
                              model.param(l.name + ".beta"),
                              model.param(l.name + ".running_mean"),
                              model.param(l.name + ".running_var"), lengths,
                              bn_opt);
            break;
          case LayerSpec::Kind::kRelu:
            y = nn::Relu(tape, y);
            break;
        }
      }
      if (opt.train && model.config.backbone.dropout > 0.0) {
        y = nn::Dropout(tape, y, model.config.backbone.dropout,
                        Mix64(opt.dropout_seed + block_index));
      }
      ++block_index;
      x = block.residual ? nn::Add(tape, x, y) : y;
    }
    if (model.arch.sum_stack_outputs) taps = taps ? nn::Add(tape, taps, x) : x;
  }
  if (taps) x = taps;
  std::vector<nn::Parameter<T>*> w, b;
  for (int k = 0; k < model.config.num_keywords; ++k) {
    w.push_back(&model.param("head." + std::to_string(k) + ".weight"));
    b.push_back(&model.param("head." + std::to_string(k) + ".bias"));
  }
  return nn::Sigmoid(tape, nn::Heads(tape, x, w, b));
}

template <typename T>
nn::Var<T> BatchToVar(const Batch& batch) {
  nn::Tensor<T> t({batch.batch_size, batch.max_frames, batch.dims});
  std::copy(batch.features.begin(), batch.features.end(), t.data.begin());
  return nn::MakeVar(std::move(t));
}

template <typename T>
std::vector<PosteriorSequence> SplitPosteriors(const nn::Tensor<T>& post,
                                               const std::vector<int64_t>& lengths,
                                               double frame_shift_ms) {
  const int64_t B = post.dim(0), Tm = post.dim(1);
  const int K = static_cast<int>(post.dim(2));
  std::vector<PosteriorSequence> out(B);
  for (int64_t b = 0; b < B; ++b) {
    auto& seq = out[b];
    seq.frames = lengths[b];
    seq.num_keywords = K;
    seq.frame_shift_ms = frame_shift_ms;
    seq.values.assign(post.data.begin() + b * Tm * K,
                      post.data.begin() + (b * Tm + lengths[b]) * K);
  }
  return out;
}

// Inference-mode forward over a padded batch.
template <typename T>
std::vector<PosteriorSequence> Forward(KwsModel<T>& model, const Batch& batch) {
  if (batch.dims != model.config.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "batch feature dim " + std::to_string(batch.dims) +
                    " vs model " + std::to_string(model.config.input_dim));
  }
  auto post = Forward<T>(model, nullptr, BatchToVar<T>(batch), batch.lengths);
  return SplitPosteriors(post->value, batch.lengths,
                         model.config.features.shift_ms);
}

// Folds every normalization layer into the conv before it. The result has no
// normalization parameters; its inference output equals the unfolded
// inference output up to rounding.
template <typename T>
KwsModel<T> FoldInference(const KwsModel<T>& model) {
  if (model.config.folded) return model;
  constexpr double kEps = nn::BatchNormOptions{}.eps;
  ModelConfig cfg = model.config;
  cfg.folded = true;
  KwsModel<T> out;
  out.config = cfg;
  out.cmvn = model.cmvn;
  out.arch = BuildArchitecture(cfg);
  std::map<std::string, nn::Tensor<T>> folded;
  std::vector<std::string> norm_prefixes;
  for (const auto& stack : model.arch.stacks) {
    for (const auto& block : stack) {
      const LayerSpec* prev_conv = nullptr;
      for (const auto& l : block.layers) {
        if (l.kind == LayerSpec::Kind::kConv) {
          prev_conv = &l;
          continue;
        }
        if (l.kind != LayerSpec::Kind::kNorm) continue;
        norm_prefixes.push_back(l.name + ".");
        if (!prev_conv) {
          throw Error(ErrorCode::kInvalidConfig,
                      "cannot fold " + l.name + ": no preceding conv");
        }
        nn::Tensor<T> w = model.param(prev_conv->name + ".weight").value();
        nn::Tensor<T> b = model.param(prev_conv->name + ".bias").value();
        const auto& g = model.param(l.name + ".gamma").value().data;
        const auto& be = model.param(l.name + ".beta").value().data;
        const auto& rm = model.param(l.name + ".running_mean").value().data;
        const auto& rv = model.param(l.name + ".running_var").value().data;
        const int64_t C = l.out_channels;
        std::vector<double> scale(C);
        for (int64_t c = 0; c < C; ++c) {
          scale[c] = g[c] / std::sqrt(static_cast<double>(rv[c]) + kEps);
        }
        for (size_t i = 0; i < w.numel(); ++i) {
          w.data[i] = static_cast<T>(w.data[i] * scale[i % C]);
        }
        for (int64_t c = 0; c < C; ++c) {
          b.data[c] = static_cast<T>((b.data[c] - rm[c]) * scale[c] + be[c]);
        }
        folded[prev_conv->name + ".weight"] = std::move(w);
        folded[prev_conv->name + ".bias"] = std::move(b);
        prev_conv = nullptr;
      }
    }
  }
  for (const auto& p : model.params) {
    const bool is_norm = std::any_of(
        norm_prefixes.begin(), norm_prefixes.end(),
        [&p](const std::string& prefix) { return p.name.starts_with(prefix); });
    if (is_norm) continue;
    auto it = folded.find(p.name);
    out.AddParam(p.name, it != folded.end() ? it->second : p.value(),
                 p.trainable);
  }
  return out;
}

}  // namespace kws

#endif  // KWS_MODEL_H_
