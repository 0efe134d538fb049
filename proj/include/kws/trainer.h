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

#ifndef KWS_TRAINER_H_
#define KWS_TRAINER_H_

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/container.h"
#include "kws/dataio.h"
#include "kws/losses.h"
#include "kws/model.h"
#include "kws/nn/adam.h"

namespace kws {

struct TrainConfig {
  int epochs = 80;
  int batch_size = 128;
  LossConfig loss;
  nn::AdamConfig optimizer;
  uint64_t seed = 777;
  int average_top_n = 30;
  std::string checkpoint_dir;
  double clip_norm = 5.0;
  // When set, loss.min_duration_frames is replaced by the estimate from the
  // positive training utterances.
  bool estimate_min_duration = true;
  double min_duration_quantile = 0.05;
  double min_duration_scale = 0.5;
  AugmentConfig augment;
  bool apply_augment = true;
  int num_workers = 1;
  // Keep unmasked features of every (utterance, speed) pair in memory.
  bool cache_features = false;
  bool resume = false;

  void Validate() const {
    if (epochs < 0 || batch_size < 1 || average_top_n < 1 ||
        average_top_n > std::max(epochs, 1) || num_workers < 1) {
      throw Error(ErrorCode::kInvalidConfig, "bad train config");
    }
    loss.Validate();
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    TrainConfig, epochs, batch_size, loss, optimizer, seed, average_top_n,
    checkpoint_dir, clip_norm, estimate_min_duration, min_duration_quantile,
    min_duration_scale, augment, apply_augment, num_workers, cache_features,
    resume)

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double seconds = 0.0;
};

// train.log lines leave out the wall-clock time so that reruns produce the
// same bytes; progress output includes it.
inline nlohmann::json ToJson(const EpochRecord& r, bool with_time = true) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"dev_loss", r.dev_loss}};
  if (with_time) j["seconds"] = r.seconds;
  return j;
}

inline std::string CheckpointPath(const std::string& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%04d.kwsf", epoch);
  return (std::filesystem::path(dir) / name).string();
}

// Features are computed once and reused; dev data is never augmented.
class DevSet {
 public:
  DevSet(const std::vector<ManifestEntry>& entries, const FeatureConfig& cfg,
         int batch_size, const AudioCache* cache = nullptr) {
    if (entries.empty()) throw Error(ErrorCode::kEmptyManifest, "dev manifest");
    PipelineConfig pipeline;
    pipeline.features = cfg;
    pipeline.apply_augment = false;
    for (size_t i = 0; i < entries.size(); i += batch_size) {
      const size_t end = std::min(entries.size(), i + batch_size);
      std::vector<ManifestEntry> chunk(entries.begin() + i,
                                       entries.begin() + end);
      batches_.push_back(MakeBatch(chunk, pipeline, 0, 0, 1, cache));
    }
    size_ = entries.size();
  }

  const std::vector<Batch>& batches() const { return batches_; }
  size_t size() const { return size_; }

 private:
  std::vector<Batch> batches_;
  size_t size_ = 0;
};

// Mean per-utterance loss in inference mode.
inline double EvaluateDev(KwsModel<float>& model, const DevSet& dev,
                          const LossConfig& loss_cfg, int epoch = 1) {
  double total = 0.0;
  for (const auto& batch : dev.batches()) {
    auto post = Forward<float>(model, nullptr, BatchToVar<float>(batch),
                               batch.lengths);
    const auto res = ComputeLoss<float>(nullptr, post,
                                        LossTargets::FromBatch(batch),
                                        loss_cfg, epoch);
    for (double v : res.per_utterance) total += v;
  }
  return total / static_cast<double>(dev.size());
}

inline double EvaluateDev(KwsModel<float>& model,
                          const std::vector<ManifestEntry>& dev,
                          const LossConfig& loss_cfg, int epoch = 1,
                          const AudioCache* cache = nullptr) {
  return EvaluateDev(model, DevSet(dev, model.config.features, 128, cache),
                     loss_cfg, epoch);
}

namespace internal {

struct OptimizerState {
  std::map<std::string, nn::AdamState> adam;
};

inline Container CheckpointContainer(const KwsModel<float>& model,
                                     const OptimizerState& opt,
                                     const TrainConfig& cfg,
                                     const EpochRecord& rec) {
  ModelFile file;
  file.model = model;
  Container c = ModelToContainer(file);
  nlohmann::json ck;
  ck["epoch"] = rec.epoch;
  ck["dev_metric"] = rec.dev_loss;
  ck["train_loss"] = rec.train_loss;
  // Every random draw of epoch e derives from (seed, e), so this pair is the
  // complete generator state for a resumed run.
  ck["rng_state"] = {{"seed", cfg.seed}, {"next_epoch", rec.epoch + 1}};
  ck["min_duration_frames"] = cfg.loss.min_duration_frames;
  nlohmann::json steps = nlohmann::json::object();
  for (const auto& p : model.params) {
    if (!p.trainable) continue;
    const auto& st = opt.adam.at(p.name);
    steps[p.name] = st.step;
    ContainerTensor m, v;
    m.name = std::string(kOptimizerPrefix) + "m." + p.name;
    v.name = std::string(kOptimizerPrefix) + "v." + p.name;
    m.shape = v.shape = p.value().shape;
    m.f32 = st.m.empty() ? std::vector<float>(p.value().numel()) : st.m;
    v.f32 = st.v.empty() ? std::vector<float>(p.value().numel()) : st.v;
    c.tensors.push_back(std::move(m));
    c.tensors.push_back(std::move(v));
  }
  ck["adam_steps"] = steps;
  c.metadata["checkpoint"] = ck;
  return c;
}

inline void RestoreOptimizer(const Container& c, const KwsModel<float>& model,
                             OptimizerState* opt) {
  const auto& steps = c.metadata.at("checkpoint").at("adam_steps");
  for (const auto& p : model.params) {
    if (!p.trainable) continue;
    auto& st = opt->adam[p.name];
    st.step = steps.at(p.name).get<int64_t>();
    const auto* m = c.Find(std::string(kOptimizerPrefix) + "m." + p.name);
    const auto* v = c.Find(std::string(kOptimizerPrefix) + "v." + p.name);
    if (!m || !v) {
      throw Error(ErrorCode::kBadContainer, "missing optimizer state for " +
                                                p.name);
    }
    st.m = st.step ? m->f32 : std::vector<float>{};
    st.v = st.step ? v->f32 : std::vector<float>{};
  }
}

inline std::vector<int> CheckpointEpochs(const std::string& dir) {
  std::vector<int> epochs;
  if (!std::filesystem::is_directory(dir)) return epochs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int e = 0;
    if (std::sscanf(name.c_str(), "epoch_%d.kwsf", &e) == 1 &&
        name == std::filesystem::path(CheckpointPath(dir, e)).filename()) {
      epochs.push_back(e);
    }
  }
  std::sort(epochs.begin(), epochs.end());
  return epochs;
}

}  // namespace internal

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int64_t min_duration_frames = 0;
};

// Observer hook invoked after every epoch (used for progress output).
using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in place, writing one checkpoint per epoch and a JSON Lines log
// (train.log) into cfg.checkpoint_dir. With cfg.resume the latest
// checkpoint in the directory is restored first and training continues
// exactly as the uninterrupted run would have.
inline TrainResult Train(KwsModel<float>& model,
                         const std::vector<ManifestEntry>& train,
                         const std::vector<ManifestEntry>& dev,
                         TrainConfig cfg, const AudioCache* cache = nullptr,
                         const EpochCallback& on_epoch = nullptr) {
  cfg.Validate();
  if (train.empty()) throw Error(ErrorCode::kEmptyManifest, "train manifest");
  if (cfg.checkpoint_dir.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "checkpoint_dir is required");
  }
  std::filesystem::create_directories(cfg.checkpoint_dir);
  const std::string log_path =
      (std::filesystem::path(cfg.checkpoint_dir) / "train.log").string();
  TrainResult result;
  if (cfg.epochs == 0) return result;

  if (cfg.estimate_min_duration && cfg.loss.kind != LossKind::kVadMean &&
      cfg.loss.kind != LossKind::kVadMax) {
    cfg.loss.min_duration_frames = EstimateMinDuration(
        train, model.config.features, cfg.min_duration_quantile,
        cfg.min_duration_scale, cache);
  }
  result.min_duration_frames = cfg.loss.min_duration_frames;

  internal::OptimizerState opt;
  int first_epoch = 1;
  if (cfg.resume) {
    const auto done = internal::CheckpointEpochs(cfg.checkpoint_dir);
    if (!done.empty()) {
      const Container c =
          LoadContainer(CheckpointPath(cfg.checkpoint_dir, done.back()));
      KwsModel<float> restored = ModelFromContainer(c);
      for (auto& p : model.params) p.value() = restored.param(p.name).value();
      internal::RestoreOptimizer(c, model, &opt);
      first_epoch = c.metadata.at("checkpoint")
                        .at("rng_state")
                        .at("next_epoch")
                        .get<int>();
      // keep only the log lines of epochs that have a checkpoint
      std::vector<std::string> kept;
      std::ifstream in(log_path);
      for (std::string line; std::getline(in, line);) {
        if (!line.empty() &&
            nlohmann::json::parse(line).at("epoch").get<int>() < first_epoch) {
          kept.push_back(line);
        }
      }
      std::ofstream out(log_path, std::ios::trunc);
      for (const auto& line : kept) out << line << '\n';
    }
  }
  if (first_epoch == 1) std::ofstream(log_path, std::ios::trunc);

  PipelineConfig pipeline;
  pipeline.features = model.config.features;
  pipeline.augment = cfg.augment;
  pipeline.apply_augment = cfg.apply_augment;
  const DevSet dev_set(dev, model.config.features, cfg.batch_size, cache);
  auto params = model.Trainable();
  for (auto* p : params) opt.adam[p->name];
  FeatureCache feature_cache;
  FeatureCache* fcache = cfg.cache_features ? &feature_cache : nullptr;

  for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 shuffle_rng(DeriveSeed(cfg.seed, "shuffle", epoch));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1],
                order[UniformInt(shuffle_rng, 0, static_cast<int64_t>(i) - 1)]);
    }
    double loss_sum = 0.0;
    size_t seen = 0;
    uint64_t batch_index = 0;
    for (size_t i = 0; i < order.size(); i += cfg.batch_size, ++batch_index) {
      std::vector<ManifestEntry> chunk;
      for (size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j) {
        chunk.push_back(train[order[j]]);
      }
      const Batch batch = MakeBatch(chunk, pipeline, cfg.seed, epoch,
                                    cfg.num_workers, cache, fcache);
      model.ZeroGrad();
      nn::Tape<float> tape;
      ForwardOptions fopt;
      fopt.train = true;
      fopt.dropout_seed =
          DeriveSeed(cfg.seed, "dropout", epoch * 1000003ull + batch_index);
      auto post = Forward<float>(model, &tape, BatchToVar<float>(batch),
                                 batch.lengths, fopt);
      auto res = ComputeLoss<float>(&tape, post, LossTargets::FromBatch(batch),
                                    cfg.loss, epoch);
      tape.Backward(res.loss);
      try {
        for (auto* p : params) {
          for (float g : p->grad().data) {
            if (!std::isfinite(g)) {
              throw Error(ErrorCode::kNonFiniteGradient, "parameter " + p->name);
            }
          }
        }
        nn::ClipGradNorm(params, cfg.clip_norm);
        for (auto* p : params) nn::AdamStep(*p, opt.adam[p->name], cfg.optimizer);
      } catch (const Error& e) {
        std::string keys;
        for (const auto& k : batch.keys) keys += (keys.empty() ? "" : ",") + k;
        std::fprintf(stderr, "non-finite gradient in batch [%s]\n", keys.c_str());
        throw Error(e.code(), std::string(e.what()) + " in batch [" + keys + "]");
      }
      for (double v : res.per_utterance) loss_sum += v;
      seen += res.per_utterance.size();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.dev_loss = EvaluateDev(model, dev_set, cfg.loss, epoch);
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    SaveContainer(CheckpointPath(cfg.checkpoint_dir, epoch),
                  internal::CheckpointContainer(model, opt, cfg, rec));
    std::ofstream(log_path, std::ios::app) << ToJson(rec, false).dump() << '\n';
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace internal {

// Sum of values[lo, hi) by recursive halving; the result depends only on
// the order of the list.
inline double PairwiseSum(const std::vector<double>& values, size_t lo,
                          size_t hi) {
  if (hi - lo == 1) return values[lo];
  const size_t mid = lo + (hi - lo) / 2;
  return PairwiseSum(values, lo, mid) + PairwiseSum(values, mid, hi);
}

}  // namespace internal

struct CheckpointInfo {
  std::string path;
  int epoch = 0;
  double dev_metric = 0.0;
};

inline std::vector<CheckpointInfo> ListCheckpoints(const std::string& dir) {
  std::vector<CheckpointInfo> out;
  for (int e : internal::CheckpointEpochs(dir)) {
    CheckpointInfo info;
    info.path = CheckpointPath(dir, e);
    const Container c = LoadContainer(info.path);
    info.epoch = e;
    info.dev_metric = c.metadata.at("checkpoint").at("dev_metric").get<double>();
    out.push_back(info);
  }
  return out;
}

// Lowest dev_metric first; ties go to the earlier epoch.
inline std::vector<CheckpointInfo> SelectBest(std::vector<CheckpointInfo> all,
                                              int top_n) {
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.dev_metric != b.dev_metric) return a.dev_metric < b.dev_metric;
    return a.epoch < b.epoch;
  });
  if (static_cast<int>(all.size()) > top_n) all.resize(top_n);
  return all;
}

// Elementwise mean of the selected models, running statistics included.
inline ModelFile AverageModels(const std::vector<ModelFile>& models) {
  if (models.empty()) throw Error(ErrorCode::kNoCheckpoints, "nothing to average");
  ModelFile out = models.front();
  std::vector<double> column(models.size());
  for (auto& p : out.model.params) {
    auto& data = p.value().data;
    for (size_t i = 0; i < data.size(); ++i) {
      for (size_t m = 0; m < models.size(); ++m) {
        const auto& other = models[m].model.param(p.name).value();
        if (other.shape != p.value().shape) {
          throw Error(ErrorCode::kDimensionMismatch, "shape of " + p.name);
        }
        column[m] = other.data[i];
      }
      data[i] = static_cast<float>(
          internal::PairwiseSum(column, 0, column.size()) /
          static_cast<double>(models.size()));
    }
  }
  return out;
}

// Averages the top_n checkpoints of dir by dev loss. With fewer present,
// all are averaged and a warning is printed.
inline ModelFile AverageCheckpoints(const std::string& dir, int top_n = 30) {
  const auto all = ListCheckpoints(dir);
  if (all.empty()) throw Error(ErrorCode::kNoCheckpoints, "no checkpoints in " + dir);
  if (static_cast<int>(all.size()) < top_n) {
    std::fprintf(stderr, "warning: %zu checkpoints in %s, averaging all\n",
                 all.size(), dir.c_str());
  }
  const auto best = SelectBest(all, top_n);
  std::vector<ModelFile> models;
  std::vector<int> epochs;
  for (const auto& info : best) {
    models.push_back(ModelFileFromContainer(LoadContainer(info.path)));
    epochs.push_back(info.epoch);
  }
  ModelFile out = AverageModels(models);
  out.extra = {{"averaged_epochs", epochs}};
  return out;
}

}  // namespace kws

#endif  // KWS_TRAINER_H_
