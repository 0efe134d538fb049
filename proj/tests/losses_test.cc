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

#include "kws/losses.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "test_util.h"

namespace kws {
namespace {

using nn::MakeVar;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using testing::ErrorCodeOf;

// Posteriors [B x T x K] from per-utterance rows of per-frame head values.
Var<double> Posteriors(const std::vector<std::vector<std::vector<double>>>& u,
                       bool grad = false) {
  const auto B = static_cast<int64_t>(u.size());
  int64_t T = 0;
  for (const auto& x : u) T = std::max<int64_t>(T, x.size());
  const auto K = static_cast<int64_t>(u[0][0].size());
  Tensor<double> t({B, T, K});
  for (int64_t b = 0; b < B; ++b) {
    for (size_t f = 0; f < u[b].size(); ++f) {
      for (int64_t k = 0; k < K; ++k) t.data[(b * T + f) * K + k] = u[b][f][k];
    }
  }
  return MakeVar(std::move(t), grad);
}

// Single-head column as a one-utterance batch.
Var<double> Column(const std::vector<double>& col) {
  std::vector<std::vector<double>> frames;
  for (double v : col) frames.push_back({v});
  return Posteriors({frames});
}

LossTargets Targets(std::vector<int> labels, std::vector<int64_t> lengths,
                    std::vector<std::optional<int64_t>> ends = {}) {
  if (ends.empty()) ends.assign(labels.size(), std::nullopt);
  return {std::move(labels), std::move(lengths), std::move(ends)};
}

TEST(MaxPoolingTest, Examples) {
  const auto p = Column({0.2, 0.9, 0.5});
  EXPECT_NEAR(MaxPoolingLoss<double>(nullptr, p, Targets({0}, {3}), 0).value,
              -std::log(0.9), 1e-9);
  EXPECT_NEAR(MaxPoolingLoss<double>(nullptr, p, Targets({-1}, {3}), 0).value,
              -std::log(0.1), 1e-9);
  const auto q = Column({0.99, 0.1, 0.3});
  const auto r = MaxPoolingLoss<double>(nullptr, q, Targets({0}, {3}), 2);
  EXPECT_NEAR(r.value, -std::log(0.3), 1e-9);
  EXPECT_EQ(r.selected_frame[0], 3);
}

TEST(MaxPoolingTest, OtherHeadsActAsNegatives) {
  // Two heads; label 1 positive on head 1, negative on head 0.
  const auto p = Posteriors({{{0.3, 0.2}, {0.6, 0.7}, {0.1, 0.4}}});
  const auto r = MaxPoolingLoss<double>(nullptr, p, Targets({1}, {3}), 0);
  EXPECT_NEAR(r.value, -std::log(0.7) - std::log(1 - 0.6), 1e-12);
  EXPECT_EQ(r.selected_frame[0], 2);
}

TEST(MaxPoolingTest, ValueIsMeanOfPerUtterance) {
  const auto p = Posteriors({{{0.2}, {0.9}, {0.5}}, {{0.4}, {0.3}, {0.0}}});
  const auto r = MaxPoolingLoss<double>(nullptr, p, Targets({0, -1}, {3, 2}), 0);
  ASSERT_EQ(r.per_utterance.size(), 2u);
  EXPECT_NEAR(r.per_utterance[1], -std::log(0.6), 1e-12);
  EXPECT_DOUBLE_EQ(r.value, (r.per_utterance[0] + r.per_utterance[1]) / 2);
  EXPECT_EQ(r.selected_frame[1], -1);
}

TEST(MaxPoolingTest, Errors) {
  const auto p = Column({0.2, 0.9, 0.5});
  EXPECT_EQ(ErrorCodeOf([&] {
              MaxPoolingLoss<double>(nullptr, p, Targets({0}, {3}), 3);
            }),
            ErrorCode::kMinDurationTooLarge);
  // m only constrains positives.
  EXPECT_FALSE(ErrorCodeOf([&] {
    MaxPoolingLoss<double>(nullptr, p, Targets({-1}, {3}), 3);
  }));
  EXPECT_EQ(ErrorCodeOf([] {
              MaxPoolingLoss<double>(nullptr, MakeVar(Tensor<double>({0, 3, 1})),
                                     Targets({}, {}), 0);
            }),
            ErrorCode::kEmptyBatch);
}

TEST(MaxPoolingTest, ClampKeepsLossFinite) {
  const auto r = MaxPoolingLoss<double>(nullptr, Column({0.0, 0.0}),
                                        Targets({0}, {2}), 0);
  EXPECT_NEAR(r.value, -std::log(1e-8), 1e-9);
  const auto s = MaxPoolingLoss<double>(nullptr, Column({1.0}), Targets({-1}, {1}), 0);
  EXPECT_NEAR(s.value, -std::log(1e-8), 1e-6);
}

TEST(MaxPoolingTest, GradientIsSparseAndMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto logits = MakeVar(testing::RandomTensor<double>({4, 9, 3}, rng, 2.0), true);
  const auto tgt = Targets({0, 2, -1, 1}, {9, 7, 8, 5});
  auto loss_of = [&](Tape<double>* tape) {
    return MaxPoolingLoss<double>(tape, nn::Sigmoid<double>(tape, logits), tgt, 2);
  };
  Tape<double> tape;
  logits->ZeroGrad();
  tape.Backward(loss_of(&tape).loss);
  const auto& g = logits->grad.data;
  for (int64_t b = 0; b < 4; ++b) {
    for (int64_t k = 0; k < 3; ++k) {
      int nonzero = 0;
      for (int64_t t = 0; t < 9; ++t) nonzero += g[(b * 9 + t) * 3 + k] != 0.0;
      EXPECT_EQ(nonzero, 1) << b << "," << k;
    }
  }
  std::vector<size_t> coords(g.size());
  for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  const auto fd = testing::CentralDifferences(
      logits->value, coords, 1e-6, [&] { return loss_of(nullptr).value; });
  for (size_t i = 0; i < coords.size(); ++i) {
    EXPECT_LT(testing::RelErr(g[i], fd[i], 1e-4), 1e-5) << i;
  }
}

TEST(MaxPoolingTest, PaddedFramesNeverParticipate) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.05, 0.6);
  const auto tgt = Targets({0, -1, 1}, {4, 6, 3}, {4, std::nullopt, 2});
  Tensor<double> base({3, 10, 2});
  for (auto& v : base.data) v = u(rng);
  auto poisoned = base;
  for (int64_t b = 0; b < 3; ++b) {
    for (int64_t t = tgt.lengths[b]; t < 10; ++t) {
      for (int k = 0; k < 2; ++k) poisoned.data[(b * 10 + t) * 2 + k] = 0.999;
    }
  }
  for (LossKind kind : {LossKind::kMaxPooling, LossKind::kVadMean,
                        LossKind::kVadMax, LossKind::kWeaklyConstraint}) {
    LossConfig cfg;
    cfg.kind = kind;
    cfg.min_duration_frames = 1;
    cfg.vad_max_range = 100;
    cfg.vad_mean_interval = 100;
    for (int epoch : {1, 9}) {
      const double a = ComputeLoss<double>(nullptr, MakeVar(base), tgt, cfg, epoch).value;
      const double b = ComputeLoss<double>(nullptr, MakeVar(poisoned), tgt, cfg, epoch).value;
      EXPECT_EQ(a, b);
    }
  }
}

TEST(MaxPoolingTest, Monotonicity) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.01, 0.9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> col(6);
    for (auto& v : col) v = u(rng);
    const auto best = std::max_element(col.begin(), col.end()) - col.begin();
    auto up = col;
    up[best] += 0.05;
    EXPECT_LT(MaxPoolingLoss<double>(nullptr, Column(up), Targets({0}, {6}), 0).value,
              MaxPoolingLoss<double>(nullptr, Column(col), Targets({0}, {6}), 0).value);
    auto any = col;
    any[trial % 6] += 0.05;
    EXPECT_GE(MaxPoolingLoss<double>(nullptr, Column(any), Targets({-1}, {6}), 0).value,
              MaxPoolingLoss<double>(nullptr, Column(col), Targets({-1}, {6}), 0).value);
  }
}

TEST(MaxPoolingTest, CrossEntropyAlgebra) {
  for (double p = 0.01; p < 1.0; p += 0.07) {
    EXPECT_EQ(MaxPoolingLoss<double>(nullptr, Column({p}), Targets({0}, {1}), 0).value,
              -std::log(p));
    EXPECT_EQ(MaxPoolingLoss<double>(nullptr, Column({p}), Targets({-1}, {1}), 0).value,
              -std::log(1.0 - p));
  }
}

TEST(VadMeanTest, Examples) {
  const auto p = Column({0.1, 0.8, 1.0, 0.6, 0.8, 0.8, 0.2});
  EXPECT_NEAR(VadMeanLoss<double>(nullptr, p, Targets({0}, {7}, {6}), 5).value,
              -std::log(0.8), 1e-9);
  EXPECT_NEAR(VadMeanLoss<double>(nullptr, p, Targets({0}, {7}, {4}), 1).value,
              -std::log(0.6), 1e-12);
  EXPECT_EQ(ErrorCodeOf([&] {
              VadMeanLoss<double>(nullptr, p, Targets({0}, {7}), 5);
            }),
            ErrorCode::kMissingEndFrame);
}

// Window over 1-based frames [end - w + 1, end] clipped to [1, n].
double BruteForceWindow(const std::vector<double>& col, int64_t n, int64_t end,
                        int64_t w, bool mean) {
  double acc = mean ? 0.0 : -1.0;
  int64_t count = 0;
  for (int64_t j = 1; j <= n; ++j) {
    if (j > end || j < end - w + 1) continue;
    acc = mean ? acc + col[j - 1] : std::max(acc, col[j - 1]);
    ++count;
  }
  return mean ? acc / count : acc;
}

TEST(VadLossTest, MatchBruteForceWindows) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 300; ++trial) {
    const int64_t n = UniformInt(rng, 1, 60);
    const int64_t end = UniformInt(rng, 1, n);
    const int64_t w = UniformInt(rng, 1, 70);
    std::vector<double> col(n);
    for (auto& v : col) v = u(rng);
    const auto tgt = Targets({0}, {n}, {end});
    EXPECT_NEAR(VadMeanLoss<double>(nullptr, Column(col), tgt, w).value,
                -std::log(BruteForceWindow(col, n, end, w, true)), 1e-12);
    EXPECT_NEAR(VadMaxLoss<double>(nullptr, Column(col), tgt, w).value,
                -std::log(BruteForceWindow(col, n, end, w, false)), 1e-12);
  }
}

TEST(VadMaxTest, FullRangeEqualsMaxPooling) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = UniformInt(rng, 1, 30);
    std::vector<double> col(n);
    for (auto& v : col) v = u(rng);
    const auto tgt = Targets({0}, {n}, {n});
    EXPECT_EQ(VadMaxLoss<double>(nullptr, Column(col), tgt, n + trial).value,
              MaxPoolingLoss<double>(nullptr, Column(col), tgt, 0).value);
  }
  const auto p = Column({0.3, 0.9, 0.4});
  EXPECT_NEAR(VadMaxLoss<double>(nullptr, p, Targets({0}, {3}, {3}), 1).value,
              -std::log(0.4), 1e-12);
}

TEST(WeaklyConstraintTest, SwitchesAfterConstraintEpochs) {
  const auto p = Column({0.95, 0.2, 0.1, 0.3, 0.5});
  const auto tgt = Targets({0}, {5}, {4});
  LossConfig cfg;
  cfg.kind = LossKind::kWeaklyConstraint;
  cfg.vad_max_range = 2;
  cfg.min_duration_frames = 0;
  const double vad = VadMaxLoss<double>(nullptr, p, tgt, 2).value;
  const double mp = MaxPoolingLoss<double>(nullptr, p, tgt, 0).value;
  ASSERT_NE(vad, mp);
  EXPECT_EQ(WeaklyConstraintLoss<double>(nullptr, p, tgt, 1, cfg).value, vad);
  EXPECT_EQ(WeaklyConstraintLoss<double>(nullptr, p, tgt, 5, cfg).value, vad);
  EXPECT_EQ(WeaklyConstraintLoss<double>(nullptr, p, tgt, 6, cfg).value, mp);
  // End frames are only needed while constrained.
  EXPECT_EQ(ErrorCodeOf([&] {
              WeaklyConstraintLoss<double>(nullptr, p, Targets({0}, {5}), 5, cfg);
            }),
            ErrorCode::kMissingEndFrame);
  EXPECT_EQ(WeaklyConstraintLoss<double>(nullptr, p, Targets({0}, {5}), 6, cfg).value,
            mp);
}

TEST(LossConfigTest, JsonAndValidation) {
  const auto cfg = nlohmann::json::parse(R"({"kind":"vad_max","vad_max_range":7})")
                       .get<LossConfig>();
  EXPECT_EQ(cfg.kind, LossKind::kVadMax);
  EXPECT_EQ(cfg.vad_max_range, 7);
  EXPECT_EQ(cfg.vad_mean_interval, 5);
  LossConfig bad;
  bad.vad_mean_interval = 0;
  EXPECT_EQ(ErrorCodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidConfig);
}

TEST(MinDurationTest, Examples) {
  EXPECT_EQ(MinDurationFromLengths({100}), 50);
  EXPECT_EQ(MinDurationFromLengths({140, 50, 60, 70, 80, 90, 100, 110, 120, 130}), 25);
  EXPECT_EQ(ErrorCodeOf([] { MinDurationFromLengths({}); }),
            ErrorCode::kNoPositives);
}

TEST(MinDurationTest, MatchesSortAndIndexOracle) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int64_t> lengths(UniformInt(rng, 1, 200));
    for (auto& v : lengths) v = UniformInt(rng, 20, 300);
    const double q = UniformInt(rng, 0, 100) / 100.0;
    auto sorted = lengths;
    std::sort(sorted.begin(), sorted.end());
    size_t rank = 1;
    while (static_cast<double>(rank) < q * static_cast<double>(sorted.size())) ++rank;
    EXPECT_EQ(NearestRankQuantile(lengths, q), sorted[rank - 1]);
    EXPECT_EQ(MinDurationFromLengths(lengths, q, 0.5), sorted[rank - 1] / 2);
  }
}

TEST(MinDurationTest, UsesCachedDurationsAndSkipsNegatives) {
  std::vector<ManifestEntry> entries = {
      {"a", "/nonexistent/a.wav", -1, {}, {}},
      {"b", "/nonexistent/b.wav", 0, 10, 120},
      {"c", "/nonexistent/c.wav", 1, 10, 80},
  };
  EXPECT_EQ(EstimateMinDuration(entries, FeatureConfig{}), 40);
  AudioCache cache;
  cache.Insert("mem", {std::vector<float>(16000, 0.0f), 16000});
  EXPECT_EQ(EstimateMinDuration({{"d", "mem", 0, {}, {}}}, FeatureConfig{}, 0.05,
                                0.5, &cache),
            49);
  EXPECT_EQ(ErrorCodeOf([&] {
              EstimateMinDuration({entries[0]}, FeatureConfig{});
            }),
            ErrorCode::kNoPositives);
}

}  // namespace
}  // namespace kws
