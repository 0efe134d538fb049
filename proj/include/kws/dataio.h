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


#ifndef KWS_DATAIO_H_
#define KWS_DATAIO_H_

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "kws/audio.h"
#include "kws/common.h"
#include "kws/features.h"
#include "json.hpp"

namespace kws {

struct ManifestEntry {
  std::string key;
  std::string wav;
  int label = -1;  // -1 non-keyword, 0..K-1 keyword index
  std::optional<int64_t> end_frame;
  std::optional<int64_t> duration_frames;
};

inline nlohmann::json ToJson(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["key"] = e.key;
  j["wav"] = e.wav;
  j["label"] = e.label;
  if (e.end_frame) j["end_frame"] = *e.end_frame;
  if (e.duration_frames) j["duration_frames"] = *e.duration_frames;
  return j;
}

inline ManifestEntry ParseManifestLine(const std::string& line,
                                       const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadManifest, where + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("key") || !j.contains("wav") ||
      !j.contains("label")) {
    throw Error(ErrorCode::kBadManifest,
                where + ": entry needs key, wav and label");
  }
  ManifestEntry e;
  try {
    e.key = j.at("key").get<std::string>();
    e.wav = j.at("wav").get<std::string>();
    e.label = j.at("label").get<int>();
    if (j.contains("end_frame") && !j["end_frame"].is_null()) {
      e.end_frame = j["end_frame"].get<int64_t>();
    }
    if (j.contains("duration_frames") && !j["duration_frames"].is_null()) {
      e.duration_frames = j["duration_frames"].get<int64_t>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kBadManifest, where + ": " + ex.what());
  }
  if (e.label < -1) {
    throw Error(ErrorCode::kBadManifest, where + ": label must be >= -1");
  }
  if (e.end_frame && *e.end_frame < 1) {
    throw Error(ErrorCode::kBadManifest, where + ": end_frame must be >= 1");
  }
  return e;
}

inline std::vector<ManifestEntry> ParseManifest(std::istream& in,
                                                const std::string& name) {
  std::vector<ManifestEntry> entries;
  std::set<std::string> keys;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    ManifestEntry e = ParseManifestLine(line, where);
    if (!keys.insert(e.key).second) {
      throw Error(ErrorCode::kBadManifest, where + ": duplicate key " + e.key);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<ManifestEntry> ReadManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return ParseManifest(in, path);
}

inline void WriteManifest(const std::string& path,
                          const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  for (const auto& e : entries) out << ToJson(e).dump() << '\n';
}

// Clips keyed by wav path. Read-only after Preload, so concurrent lookups
// are safe.
class AudioCache {
 public:
  void Preload(const std::vector<ManifestEntry>& entries) {
    for (const auto& e : entries) {
      if (!clips_.count(e.wav)) clips_.emplace(e.wav, ReadWav(e.wav));
    }
  }
  void Insert(const std::string& path, AudioClip clip) {
    clips_[path] = std::move(clip);
  }
  const AudioClip* Find(const std::string& path) const {
    auto it = clips_.find(path);
    return it == clips_.end() ? nullptr : &it->second;
  }
  size_t size() const { return clips_.size(); }

 private:
  std::map<std::string, AudioClip> clips_;
};

struct AugmentConfig {
  std::vector<double> speed_factors = {0.9, 1.0, 1.1};
  bool spec_augment = true;
  SpecAugmentPolicy spec_policy;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AugmentConfig, speed_factors, spec_augment,
                                   spec_policy)

struct PipelineConfig {
  FeatureConfig features;
  AugmentConfig augment;
  bool apply_augment = true;
};

// Utterance-major [utterances x frames x dims], right-padded with zeros.
struct Batch {
  int64_t batch_size = 0;
  int64_t max_frames = 0;
  int dims = 0;
  std::vector<float> features;
  std::vector<int64_t> lengths;
  std::vector<int> labels;
  std::vector<std::optional<int64_t>> end_frames;
  std::vector<std::string> keys;

  const float* frame(int64_t b, int64_t t) const {
    return features.data() + (b * max_frames + t) * dims;
  }
};

namespace internal {

inline AudioClip LoadClip(const ManifestEntry& e, const AudioCache* cache) {
  if (cache) {
    if (const AudioClip* clip = cache->Find(e.wav)) return *clip;
  }
  return ReadWav(e.wav);
}

}  // namespace internal

// Memoizes filter-bank features of (wav, speed factor) pairs so that only
// the random masking is redone each epoch. Safe for concurrent use.
class FeatureCache {
 public:
  template <typename Fn>
  FeatureMatrix Get(const std::string& wav, double factor, Fn&& compute) {
    const auto key = std::make_pair(wav, factor);
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = feats_.find(key);
      if (it != feats_.end()) return it->second;
    }
    FeatureMatrix feat = compute();
    std::lock_guard<std::mutex> lock(mu_);
    feats_.emplace(key, feat);
    return feat;
  }
  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return feats_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, double>, FeatureMatrix> feats_;
};

// resample -> speed perturb -> fbank -> spec augment for one utterance.
// Every random draw comes from a generator seeded by (seed, key, epoch).
inline FeatureMatrix ExtractFeatures(const ManifestEntry& entry,
                                     const PipelineConfig& pipeline,
                                     uint64_t seed, uint64_t epoch,
                                     const AudioCache* cache = nullptr,
                                     FeatureCache* feature_cache = nullptr) {
  try {
    std::mt19937_64 rng(DeriveSeed(seed, entry.key, epoch));
    const auto& aug = pipeline.augment;
    double factor = 1.0;
    if (pipeline.apply_augment && !aug.speed_factors.empty()) {
      const auto pick = UniformInt(
          rng, 0, static_cast<int64_t>(aug.speed_factors.size()) - 1);
      factor = aug.speed_factors[pick];
    }
    auto compute = [&] {
      AudioClip clip = internal::LoadClip(entry, cache);
      clip = Resample(clip, pipeline.features.sample_rate);
      return Fbank(SpeedPerturb(clip, factor), pipeline.features);
    };
    FeatureMatrix feat = feature_cache
                             ? feature_cache->Get(entry.wav, factor, compute)
                             : compute();
    if (pipeline.apply_augment && aug.spec_augment) {
      feat = SpecAugment(feat, aug.spec_policy, rng());
    }
    return feat;
  } catch (const Error& e) {
    throw Error(e.code(), "utterance " + entry.key + ": " + e.what());
  }
}

inline Batch AssembleBatch(const std::vector<ManifestEntry>& entries,
                           std::vector<FeatureMatrix> feats) {
  Batch batch;
  batch.batch_size = static_cast<int64_t>(entries.size());
  batch.dims = feats.front().dims;
  for (const auto& f : feats) {
    batch.max_frames = std::max(batch.max_frames, f.frames);
  }
  batch.features.assign(
      static_cast<size_t>(batch.batch_size * batch.max_frames * batch.dims),
      0.0f);
  for (size_t i = 0; i < entries.size(); ++i) {
    std::memcpy(batch.features.data() + i * batch.max_frames * batch.dims,
                feats[i].values.data(), feats[i].values.size() * sizeof(float));
    batch.lengths.push_back(feats[i].frames);
    batch.labels.push_back(entries[i].label);
    batch.end_frames.push_back(entries[i].end_frame);
    batch.keys.push_back(entries[i].key);
  }
  return batch;
}

// Content is independent of num_workers: worker w fills slots w, w+W, ...
inline Batch MakeBatch(const std::vector<ManifestEntry>& entries,
                       const PipelineConfig& pipeline, uint64_t seed,
                       uint64_t epoch = 0, int num_workers = 1,
                       const AudioCache* cache = nullptr,
                       FeatureCache* feature_cache = nullptr) {
  if (entries.empty()) throw Error(ErrorCode::kEmptyBatch, "no entries");
  std::vector<FeatureMatrix> feats(entries.size());
  const int workers =
      std::max(1, std::min<int>(num_workers, static_cast<int>(entries.size())));
  if (workers == 1) {
    for (size_t i = 0; i < entries.size(); ++i) {
      feats[i] = ExtractFeatures(entries[i], pipeline, seed, epoch, cache,
                                 feature_cache);
    }
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (size_t i = w; i < entries.size(); i += workers) {
            feats[i] = ExtractFeatures(entries[i], pipeline, seed, epoch, cache,
                                 feature_cache);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return AssembleBatch(entries, std::move(feats));
}

// Global statistics over unaugmented features of every listed utterance.
inline CmvnStats ComputeCmvn(const std::vector<ManifestEntry>& entries,
                             const FeatureConfig& cfg,
                             const AudioCache* cache = nullptr) {
  if (entries.empty()) throw Error(ErrorCode::kEmptyManifest, "cmvn manifest");
  PipelineConfig pipeline;
  pipeline.features = cfg;
  pipeline.apply_augment = false;
  CmvnAccumulator acc;
  for (const auto& e : entries) {
    acc.Accumulate(ExtractFeatures(e, pipeline, 0, 0, cache));
  }
  return acc.Finish();
}

}  // namespace kws

#endif  // KWS_DATAIO_H_
