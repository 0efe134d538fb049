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

#include "kws/trainer.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kws/synthetic.h"
#include "test_util.h"

namespace kws {
namespace {

using testing::ErrorCodeOf;

// 50 positives per keyword plus 100 two-second negatives.
struct SmallTask {
  SyntheticSet train;
  SyntheticSet dev;
  AudioCache cache;
  CmvnStats cmvn;

  SmallTask() {
    SyntheticConfig sc;
    sc.positives_per_keyword = 50;
    sc.negative_seconds = 200;
    train = GenerateSynthetic(sc, "train", "/mem/train");
    sc.positives_per_keyword = 10;
    sc.negative_seconds = 40;
    sc.seed = 778;
    dev = GenerateSynthetic(sc, "dev", "/mem/dev");
    for (const auto* s : {&train, &dev}) {
      for (const auto& e : s->entries) cache.Insert(e.wav, *s->cache.Find(e.wav));
    }
    cmvn = ComputeCmvn(train.entries, FeatureConfig{}, &cache);
  }

  KwsModel<float> Model() const {
    ModelConfig mc;
    mc.backbone = DefaultBackbone(BackboneKind::kDsTcn);
    mc.backbone.hidden_channels = 16;
    mc.num_keywords = 2;
    return BuildModel<float>(mc, cmvn);
  }
};

const SmallTask& Task() {
  static const SmallTask* task = new SmallTask();
  return *task;
}

TrainConfig Config(const std::string& dir, int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.average_top_n = std::max(1, epochs);
  cfg.checkpoint_dir = dir;
  cfg.cache_features = true;
  return cfg;
}

std::vector<std::vector<float>> Values(const KwsModel<float>& m,
                                       bool trainable_only) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.params) {
    const auto& d = p.value().data;
    if (!trainable_only || p.trainable) out.emplace_back(d.begin(), d.end());
  }
  return out;
}

std::string Slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> LogLines(const std::string& dir) {
  std::vector<nlohmann::json> out;
  std::ifstream in(dir + "/train.log");
  for (std::string line; std::getline(in, line);) {
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

TEST(TrainTest, ZeroEpochsWritesNothing) {
  const auto dir = testing::TempDir("train_zero");
  auto model = Task().Model();
  const auto before = Values(model, false);
  const auto res = Train(model, Task().train.entries, Task().dev.entries,
                         Config(dir, 0), &Task().cache);
  EXPECT_TRUE(res.epochs.empty());
  EXPECT_EQ(Values(model, false), before);
  EXPECT_TRUE(ListCheckpoints(dir).empty());
}

TEST(TrainTest, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto dir = testing::TempDir("train_lr0");
  auto model = Task().Model();
  const auto before = Values(model, true);
  auto cfg = Config(dir, 2);
  cfg.optimizer.lr = 0.0;
  Train(model, Task().train.entries, Task().dev.entries, cfg, &Task().cache);
  EXPECT_EQ(Values(model, true), before);
  EXPECT_EQ(ListCheckpoints(dir).size(), 2u);
}

TEST(TrainTest, TrainLossDecreasesEveryEpoch) {
  const auto dir = testing::TempDir("train_decrease");
  auto model = Task().Model();
  const auto res = Train(model, Task().train.entries, Task().dev.entries,
                         Config(dir, 5), &Task().cache);
  ASSERT_EQ(res.epochs.size(), 5u);
  for (size_t i = 1; i < res.epochs.size(); ++i) {
    EXPECT_LT(res.epochs[i].train_loss, res.epochs[i - 1].train_loss) << i;
  }
  EXPECT_GT(res.min_duration_frames, 0);
  // One log line and one checkpoint per epoch.
  const auto lines = LogLines(dir);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_FALSE(lines[0].contains("seconds"));
  const auto ck = LoadContainer(CheckpointPath(dir, 3)).metadata.at("checkpoint");
  EXPECT_EQ(ck.at("epoch"), 3);
  EXPECT_EQ(ck.at("dev_metric").get<double>(), res.epochs[2].dev_loss);
  EXPECT_EQ(ck.at("rng_state").at("next_epoch"), 4);
}

TEST(TrainTest, OverfitsOneBatch) {
  const auto dir = testing::TempDir("train_overfit");
  std::vector<ManifestEntry> batch;
  const auto& all = Task().train.entries;
  for (size_t i = 0; i < all.size() && batch.size() < 8; i += all.size() / 8) {
    batch.push_back(all[i]);
  }
  auto model = Task().Model();
  auto cfg = Config(dir, 300);
  cfg.batch_size = 8;
  cfg.apply_augment = false;
  cfg.estimate_min_duration = false;
  cfg.optimizer.lr = 1e-2;
  cfg.optimizer.weight_decay = 0.0;
  Train(model, batch, batch, cfg, &Task().cache);
  EXPECT_LT(EvaluateDev(model, batch, cfg.loss, 300, &Task().cache), 0.01);
}

TEST(EvaluateDevTest, IsPureAndRejectsEmptyManifest) {
  auto model = Task().Model();
  const auto before = Values(model, false);
  const LossConfig loss;
  const double a = EvaluateDev(model, Task().dev.entries, loss, 1, &Task().cache);
  const double b = EvaluateDev(model, Task().dev.entries, loss, 1, &Task().cache);
  EXPECT_EQ(a, b);
  EXPECT_GT(a, 0.0);
  EXPECT_EQ(Values(model, false), before);
  EXPECT_EQ(ErrorCodeOf([&] { EvaluateDev(model, {}, loss); }),
            ErrorCode::kEmptyManifest);
}

TEST(TrainTest, ResumeContinuesExactly) {
  const auto straight = testing::TempDir("train_straight");
  const auto resumed = testing::TempDir("train_resumed");
  auto a = Task().Model();
  Train(a, Task().train.entries, Task().dev.entries, Config(straight, 4),
        &Task().cache);
  auto b = Task().Model();
  Train(b, Task().train.entries, Task().dev.entries, Config(resumed, 2),
        &Task().cache);
  auto fresh = Task().Model();
  auto cfg = Config(resumed, 4);
  cfg.resume = true;
  Train(fresh, Task().train.entries, Task().dev.entries, cfg, &Task().cache);
  for (int e = 1; e <= 4; ++e) {
    EXPECT_TRUE(Slurp(CheckpointPath(straight, e)) ==
                Slurp(CheckpointPath(resumed, e)))
        << e;
  }
  EXPECT_TRUE(Slurp(straight + "/train.log") == Slurp(resumed + "/train.log"));
}

TEST(TrainTest, RerunsAreByteIdentical) {
  const auto one = testing::TempDir("train_rerun1");
  const auto two = testing::TempDir("train_rerun2");
  for (const auto& dir : {one, two}) {
    auto m = Task().Model();
    auto cfg = Config(dir, 2);
    cfg.num_workers = dir == one ? 1 : 3;
    Train(m, Task().train.entries, Task().dev.entries, cfg, &Task().cache);
  }
  for (int e = 1; e <= 2; ++e) {
    EXPECT_TRUE(Slurp(CheckpointPath(one, e)) == Slurp(CheckpointPath(two, e)))
        << e;
  }
  EXPECT_TRUE(Slurp(one + "/train.log") == Slurp(two + "/train.log"));
}

TEST(TrainConfigTest, ValidationAndDefaults) {
  const auto cfg = nlohmann::json::parse(R"({"epochs": 3, "average_top_n": 2})")
                       .get<TrainConfig>();
  EXPECT_EQ(cfg.batch_size, 128);
  EXPECT_EQ(cfg.seed, 777u);
  EXPECT_NO_THROW(cfg.Validate());
  TrainConfig bad;
  bad.epochs = 5;
  bad.average_top_n = 6;
  EXPECT_EQ(ErrorCodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidConfig);
  bad.average_top_n = 5;
  bad.batch_size = 0;
  EXPECT_EQ(ErrorCodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidConfig);
}

// Writes a checkpoint whose every parameter is filled by fill(index).
void WriteCheckpoint(const std::string& dir, int epoch, double dev,
                     const std::function<float(size_t)>& fill) {
  KwsModel<float> m = Task().Model();
  size_t i = 0;
  for (auto& p : m.params) {
    for (auto& v : p.value().data) v = fill(i++);
  }
  internal::OptimizerState opt;
  for (auto* p : m.Trainable()) opt.adam[p->name];
  EpochRecord rec;
  rec.epoch = epoch;
  rec.dev_loss = dev;
  TrainConfig cfg;
  std::filesystem::create_directories(dir);
  SaveContainer(CheckpointPath(dir, epoch),
                internal::CheckpointContainer(m, opt, cfg, rec));
}

TEST(AverageTest, TwoPointMean) {
  const auto dir = testing::TempDir("avg_two");
  WriteCheckpoint(dir, 1, 0.5, [](size_t i) { return 0.25f * (i % 7); });
  WriteCheckpoint(dir, 2, 0.4, [](size_t i) { return -0.5f * (i % 5); });
  const auto avg = AverageCheckpoints(dir, 2);
  size_t i = 0;
  for (const auto& p : avg.model.params) {
    for (float v : p.value().data) {
      EXPECT_EQ(v, (0.25f * (i % 7) - 0.5f * (i % 5)) / 2) << p.name;
      ++i;
    }
  }
  EXPECT_EQ(avg.extra.at("averaged_epochs"), nlohmann::json({2, 1}));
}

TEST(AverageTest, IdenticalCheckpointsAverageToThemselves) {
  const auto dir = testing::TempDir("avg_same");
  auto fill = [](size_t i) { return 0.1f * static_cast<float>(i % 13) - 0.3f; };
  for (int e = 1; e <= 3; ++e) WriteCheckpoint(dir, e, 1.0, fill);
  const auto avg = AverageCheckpoints(dir, 3);
  const auto one = ModelFileFromContainer(LoadContainer(CheckpointPath(dir, 2)));
  EXPECT_EQ(Values(avg.model, false), Values(one.model, false));
}

TEST(AverageTest, SelectionMatchesSortOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<CheckpointInfo> all;
    const int n = static_cast<int>(UniformInt(rng, 1, 40));
    for (int e = 1; e <= n; ++e) {
      all.push_back({"", e, static_cast<double>(UniformInt(rng, 0, 10)) / 10});
    }
    const int top = static_cast<int>(UniformInt(rng, 1, 35));
    std::vector<std::pair<double, int>> oracle;
    for (const auto& c : all) oracle.emplace_back(c.dev_metric, c.epoch);
    std::sort(oracle.begin(), oracle.end());
    oracle.resize(std::min<size_t>(oracle.size(), top));
    auto shuffled = all;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (const auto& input : {all, shuffled}) {
      const auto got = SelectBest(input, top);
      ASSERT_EQ(got.size(), oracle.size());
      for (size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].epoch, oracle[i].second);
      }
    }
  }
}

TEST(AverageTest, PicksLowestDevMetrics) {
  const auto dir = testing::TempDir("avg_pick");
  WriteCheckpoint(dir, 1, 0.9, [](size_t) { return 100.0f; });
  WriteCheckpoint(dir, 2, 0.1, [](size_t) { return 1.0f; });
  WriteCheckpoint(dir, 3, 0.2, [](size_t) { return 3.0f; });
  const auto avg = AverageCheckpoints(dir, 2);
  for (const auto& p : avg.model.params) {
    for (float v : p.value().data) EXPECT_EQ(v, 2.0f);
  }
  // Optimizer tensors in checkpoints do not leak into the model.
  EXPECT_FALSE(avg.model.has_param("optim.m.proj.weight"));
}

TEST(AverageTest, EmptyDirectory) {
  const auto dir = testing::TempDir("avg_empty");
  EXPECT_EQ(ErrorCodeOf([&] { AverageCheckpoints(dir, 3); }),
            ErrorCode::kNoCheckpoints);
}

TEST(AverageTest, PairwiseSumIsExactOnSmallIntegers) {
  std::vector<double> v;
  for (int i = 1; i <= 37; ++i) v.push_back(i);
  EXPECT_EQ(internal::PairwiseSum(v, 0, v.size()), 37.0 * 38.0 / 2.0);
}

}  // namespace
}  // namespace kws
