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

#ifndef KWS_EVALKIT_H_
#define KWS_EVALKIT_H_

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/dataio.h"
#include "kws/detector.h"
#include "kws/model.h"

namespace kws {

struct ScoreRecord {
  std::string key;
  int label = -1;
  std::vector<float> peak_score;  // per keyword, max over valid frames
  double duration_seconds = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScoreRecord, key, label, peak_score,
                                   duration_seconds)

inline std::vector<float> PeakScores(const PosteriorSequence& post) {
  std::vector<float> peak(post.num_keywords, 0.0f);
  for (int64_t t = 0; t < post.frames; ++t) {
    for (int k = 0; k < post.num_keywords; ++k) {
      peak[k] = std::max(peak[k], post.at(t, k));
    }
  }
  return peak;
}

// Offline forward per utterance (batched, padding excluded from the peak).
inline std::vector<ScoreRecord> ScoreManifest(KwsModel<float>& model,
                                              const std::vector<ManifestEntry>& entries,
                                              int batch_size = 64,
                                              const AudioCache* cache = nullptr) {
  PipelineConfig pipeline;
  pipeline.features = model.config.features;
  pipeline.apply_augment = false;
  std::vector<ScoreRecord> out;
  for (size_t i = 0; i < entries.size(); i += batch_size) {
    const size_t end = std::min(entries.size(), i + batch_size);
    std::vector<ManifestEntry> chunk(entries.begin() + i, entries.begin() + end);
    const Batch batch = MakeBatch(chunk, pipeline, 0, 0, 1, cache);
    const auto posts = Forward<float>(model, batch);
    for (size_t b = 0; b < chunk.size(); ++b) {
      ScoreRecord r;
      r.key = chunk[b].key;
      r.label = chunk[b].label;
      r.peak_score = PeakScores(posts[b]);
      const AudioClip clip = Resample(internal::LoadClip(chunk[b], cache),
                                      pipeline.features.sample_rate);
      r.duration_seconds =
          static_cast<double>(clip.size()) / pipeline.features.sample_rate;
      out.push_back(std::move(r));
    }
  }
  return out;
}

struct DetPoint {
  double threshold = 0.0;
  double fah = 0.0;  // false alarms per hour
  double frr = 0.0;  // percent
};

struct DetCurve {
  // "utterance_peak": one alarm at most per negative utterance.
  // "stream_events": refractory detector events on long negative streams.
  std::string mode = "utterance_peak";
  std::vector<DetPoint> points;  // ascending threshold
};

// n + 1 evenly spaced thresholds covering [0, 1].
inline std::vector<double> ThresholdGrid(int n = 1000) {
  std::vector<double> grid;
  for (int i = 0; i <= n; ++i) grid.push_back(static_cast<double>(i) / n);
  return grid;
}

namespace internal {

inline void PositivePeaks(const std::vector<ScoreRecord>& scores, int keyword,
                          std::vector<float>* pos) {
  for (const auto& r : scores) {
    if (r.label == keyword) pos->push_back(r.peak_score.at(keyword));
  }
  if (pos->empty()) {
    throw Error(ErrorCode::kNoPositives,
                "no positives for keyword " + std::to_string(keyword));
  }
  std::sort(pos->begin(), pos->end());
}

// Number of sorted values strictly below x.
inline size_t CountBelow(const std::vector<float>& sorted, double x) {
  return static_cast<size_t>(
      std::lower_bound(sorted.begin(), sorted.end(), x,
                       [](float v, double t) { return v < t; }) -
      sorted.begin());
}

}  // namespace internal

// FRR(theta) = 100 * #(positive peak < theta) / #positives;
// FAH(theta) = #(negative peak >= theta) / negative hours. Only label -1
// utterances are negatives; other keywords' positives are left out.
inline DetCurve ComputeDetCurve(const std::vector<ScoreRecord>& scores,
                                int keyword,
                                std::vector<double> thresholds = ThresholdGrid()) {
  std::vector<float> pos, neg;
  internal::PositivePeaks(scores, keyword, &pos);
  double seconds = 0.0;
  for (const auto& r : scores) {
    if (r.label != -1) continue;
    neg.push_back(r.peak_score.at(keyword));
    seconds += r.duration_seconds;
  }
  if (neg.empty() || !(seconds > 0.0)) {
    throw Error(ErrorCode::kNoNegatives, "no negative audio");
  }
  std::sort(neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end());
  const double hours = seconds / 3600.0;
  DetCurve curve;
  for (double th : thresholds) {
    DetPoint p;
    p.threshold = th;
    p.frr = 100.0 * static_cast<double>(internal::CountBelow(pos, th)) /
            static_cast<double>(pos.size());
    p.fah = static_cast<double>(neg.size() - internal::CountBelow(neg, th)) /
            hours;
    curve.points.push_back(p);
  }
  return curve;
}

// Event-counting variant for long negative streams: alarms at each
// threshold are the refractory detector's firings on the stream posteriors.
inline DetCurve ComputeStreamDetCurve(const std::vector<ScoreRecord>& positives,
                                      const std::vector<PosteriorSequence>& streams,
                                      int keyword, int64_t refractory_frames,
                                      std::vector<double> thresholds = ThresholdGrid()) {
  std::vector<float> pos;
  internal::PositivePeaks(positives, keyword, &pos);
  double seconds = 0.0;
  for (const auto& s : streams) seconds += s.frames * s.frame_shift_ms / 1000.0;
  if (!(seconds > 0.0)) throw Error(ErrorCode::kNoNegatives, "no negative audio");
  std::sort(thresholds.begin(), thresholds.end());
  DetCurve curve;
  curve.mode = "stream_events";
  for (double th : thresholds) {
    size_t alarms = 0;
    for (const auto& s : streams) {
      std::vector<double> per_kw(s.num_keywords, 2.0);  // never fires
      per_kw[keyword] = th;
      alarms += FireDetections(s, per_kw, refractory_frames).size();
    }
    curve.points.push_back(
        {th, static_cast<double>(alarms) / (seconds / 3600.0),
         100.0 * static_cast<double>(internal::CountBelow(pos, th)) /
             static_cast<double>(pos.size())});
  }
  return curve;
}

// FRR at the smallest threshold whose FAH is at most target_fah.
inline double FrrAtFah(const DetCurve& curve, double target_fah) {
  if (curve.points.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "empty DET curve");
  }
  for (const auto& p : curve.points) {
    if (p.fah <= target_fah) return p.frr;
  }
  throw Error(ErrorCode::kTargetUnreachable,
              "FAH above " + std::to_string(target_fah) + " at every threshold");
}

// Prediction is the keyword with the highest peak; ties go to the lowest
// index.
inline int PredictKeyword(const ScoreRecord& r) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(r.peak_score.size()); ++k) {
    if (r.peak_score[k] > r.peak_score[best]) best = k;
  }
  return best;
}

inline double ClassifyAccuracy(const std::vector<ScoreRecord>& scores) {
  if (scores.empty()) throw Error(ErrorCode::kEmptyManifest, "no scores");
  size_t correct = 0;
  for (const auto& r : scores) {
    if (r.label < 0) {
      throw Error(ErrorCode::kNegativeLabelPresent,
                  "utterance " + r.key + " has label " + std::to_string(r.label));
    }
    if (PredictKeyword(r) == r.label) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(scores.size());
}

inline double ClassifyAccuracy(KwsModel<float>& model,
                               const std::vector<ManifestEntry>& entries,
                               const AudioCache* cache = nullptr) {
  for (const auto& e : entries) {
    if (e.label < 0) {
      throw Error(ErrorCode::kNegativeLabelPresent,
                  "utterance " + e.key + " has label " + std::to_string(e.label));
    }
  }
  return ClassifyAccuracy(ScoreManifest(model, entries, 64, cache));
}

inline std::string DetCsv(const DetCurve& curve) {
  std::string out = "threshold,fah,frr\n";
  char line[96];
  for (const auto& p : curve.points) {
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f\n", p.threshold, p.fah,
                  p.frr);
    out += line;
  }
  return out;
}

inline void WriteScores(const std::string& path,
                        const std::vector<ScoreRecord>& scores) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  for (const auto& r : scores) out << nlohmann::json(r).dump() << '\n';
}

inline std::vector<ScoreRecord> ReadScores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::vector<ScoreRecord> out;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ScoreRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kBadManifest,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace kws

#endif  // KWS_EVALKIT_H_
