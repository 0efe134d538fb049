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

#include "kws/dataio.h"

#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.h"

namespace kws {
namespace {

using testing::ErrorCodeOf;

std::vector<float> Noise(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(g(rng));
  return x;
}

// n in-memory utterances of varying length, registered in cache.
std::vector<ManifestEntry> Corpus(int n, AudioCache* cache) {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.key = "utt" + std::to_string(i);
    e.wav = "mem://" + e.key;
    e.label = i % 3 - 1;
    if (e.label >= 0) e.end_frame = 40 + i;
    cache->Insert(e.wav, {Noise(8000 + 800 * i, i), 16000});
    entries.push_back(e);
  }
  return entries;
}

TEST(ManifestTest, ParsesAndRoundTrips) {
  std::istringstream in(
      R"({"key":"a","wav":"a.wav","label":-1})"
      "\n\n"
      R"({"key":"b","wav":"b.wav","label":1,"end_frame":57,"duration_frames":30})"
      "\n");
  const auto entries = ParseManifest(in, "m");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].label, -1);
  EXPECT_FALSE(entries[0].end_frame);
  EXPECT_EQ(*entries[1].end_frame, 57);
  EXPECT_EQ(*entries[1].duration_frames, 30);
  const auto dir = testing::TempDir("manifest");
  WriteManifest(dir + "/m.jsonl", entries);
  const auto back = ReadManifest(dir + "/m.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(ToJson(back[1]), ToJson(entries[1]));
}

TEST(ManifestTest, RejectsBadLines) {
  for (const std::string text : {
           "not json",
           R"({"key":"a","wav":"a.wav"})",
           R"({"key":"a","wav":"a.wav","label":-2})",
           R"({"key":"a","wav":"a.wav","label":"x"})",
           R"({"key":"a","wav":"a.wav","label":0,"end_frame":0})",
           "{\"key\":\"a\",\"wav\":\"a\",\"label\":0}\n"
           "{\"key\":\"a\",\"wav\":\"b\",\"label\":0}",
       }) {
    std::istringstream in(text);
    EXPECT_EQ(ErrorCodeOf([&] { ParseManifest(in, "m"); }),
              ErrorCode::kBadManifest)
        << text;
  }
  EXPECT_EQ(ErrorCodeOf([] { ReadManifest("/nonexistent/m.jsonl"); }),
            ErrorCode::kIoError);
}

TEST(BatchTest, OneSecondUtteranceHas98Frames) {
  AudioCache cache;
  cache.Insert("one", {Noise(16000, 1), 16000});
  PipelineConfig pipeline;
  pipeline.apply_augment = false;
  const auto b = MakeBatch({{"k", "one", -1, {}, {}}}, pipeline, 777, 0, 1,
                           &cache);
  EXPECT_EQ(b.lengths, std::vector<int64_t>{98});
  EXPECT_EQ(b.max_frames, 98);
  EXPECT_EQ(b.dims, 40);
}

TEST(BatchTest, PadsWithZerosAndKeepsMetadata) {
  AudioCache cache;
  const auto entries = Corpus(5, &cache);
  PipelineConfig pipeline;
  pipeline.apply_augment = false;
  const auto b = MakeBatch(entries, pipeline, 1, 0, 1, &cache);
  ASSERT_EQ(b.batch_size, 5);
  for (int i = 0; i < 5; ++i) {
    const auto single = ExtractFeatures(entries[i], pipeline, 1, 0, &cache);
    EXPECT_EQ(b.lengths[i], single.frames);
    EXPECT_EQ(b.labels[i], entries[i].label);
    EXPECT_EQ(b.end_frames[i], entries[i].end_frame);
    EXPECT_EQ(b.keys[i], entries[i].key);
    for (int64_t t = 0; t < b.max_frames; ++t) {
      for (int d = 0; d < b.dims; ++d) {
        const float want = t < single.frames ? single.at(t, d) : 0.0f;
        ASSERT_EQ(b.frame(i, t)[d], want);
      }
    }
  }
  EXPECT_EQ(ErrorCodeOf([&] { MakeBatch({}, pipeline, 1); }),
            ErrorCode::kEmptyBatch);
}

TEST(BatchTest, WorkerCountDoesNotChangeContent) {
  AudioCache cache;
  const auto entries = Corpus(9, &cache);
  PipelineConfig pipeline;
  const auto one = MakeBatch(entries, pipeline, 777, 3, 1, &cache);
  const auto four = MakeBatch(entries, pipeline, 777, 3, 4, &cache);
  EXPECT_EQ(one.features, four.features);
  EXPECT_EQ(one.lengths, four.lengths);
}

TEST(BatchTest, AugmentationIsSeededPerEpoch) {
  AudioCache cache;
  const auto entries = Corpus(4, &cache);
  PipelineConfig pipeline;
  const auto a = MakeBatch(entries, pipeline, 777, 2, 1, &cache);
  EXPECT_EQ(a.features, MakeBatch(entries, pipeline, 777, 2, 1, &cache).features);
  EXPECT_NE(a.features, MakeBatch(entries, pipeline, 777, 3, 1, &cache).features);
  EXPECT_NE(a.features, MakeBatch(entries, pipeline, 778, 2, 1, &cache).features);
}

TEST(BatchTest, NeutralAugmentationIsIdentity) {
  AudioCache cache;
  const auto entries = Corpus(4, &cache);
  PipelineConfig plain;
  plain.apply_augment = false;
  PipelineConfig neutral;
  neutral.augment.speed_factors = {1.0};
  neutral.augment.spec_augment = false;
  EXPECT_EQ(MakeBatch(entries, plain, 5, 0, 1, &cache).features,
            MakeBatch(entries, neutral, 9, 4, 1, &cache).features);
}

TEST(BatchTest, FeatureCacheGivesIdenticalBatches) {
  AudioCache cache;
  const auto entries = Corpus(6, &cache);
  PipelineConfig pipeline;
  FeatureCache feats;
  for (uint64_t epoch = 0; epoch < 3; ++epoch) {
    const auto cached = MakeBatch(entries, pipeline, 7, epoch, 2, &cache, &feats);
    const auto fresh = MakeBatch(entries, pipeline, 7, epoch, 1, &cache);
    EXPECT_EQ(cached.features, fresh.features);
  }
  EXPECT_LE(feats.size(), entries.size() * pipeline.augment.speed_factors.size());
}

TEST(BatchTest, ResamplesToFeatureRate) {
  AudioCache cache;
  cache.Insert("a8k", {Noise(8000, 3), 8000});
  PipelineConfig pipeline;
  pipeline.apply_augment = false;
  const auto f = ExtractFeatures({"k", "a8k", -1, {}, {}}, pipeline, 0, 0, &cache);
  EXPECT_EQ(f.frames, 98);
}

TEST(BatchTest, ErrorsNameTheUtterance) {
  PipelineConfig pipeline;
  try {
    ExtractFeatures({"missing-utt", "/nonexistent.wav", -1, {}, {}}, pipeline,
                    0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("missing-utt"), std::string::npos);
  }
}

TEST(CmvnCorpusTest, MatchesAccumulatorOverUnaugmentedFeatures) {
  AudioCache cache;
  const auto entries = Corpus(4, &cache);
  const auto stats = ComputeCmvn(entries, FeatureConfig{}, &cache);
  PipelineConfig pipeline;
  pipeline.apply_augment = false;
  CmvnAccumulator acc;
  for (const auto& e : entries) acc.Accumulate(ExtractFeatures(e, pipeline, 0, 0, &cache));
  const auto want = acc.Finish();
  EXPECT_EQ(stats.mean, want.mean);
  EXPECT_EQ(stats.inv_stddev, want.inv_stddev);
  EXPECT_EQ(ErrorCodeOf([] { ComputeCmvn({}, FeatureConfig{}); }),
            ErrorCode::kEmptyManifest);
}

}  // namespace
}  // namespace kws
