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

#include "kws/config.h"

#include <gtest/gtest.h>

#include "test_util.h"

namespace kws {
namespace {

using nlohmann::json;
using testing::ErrorCodeOf;

TEST(RunConfigTest, EmptyDocumentGivesDefaults) {
  const auto cfg = ParseRunConfig(json::object());
  EXPECT_EQ(cfg.train.epochs, 80);
  EXPECT_EQ(cfg.train.batch_size, 128);
  EXPECT_EQ(cfg.train.average_top_n, 30);
  EXPECT_EQ(cfg.train.seed, 777u);
  EXPECT_EQ(cfg.train.loss.kind, LossKind::kMaxPooling);
  EXPECT_EQ(cfg.model.backbone.kind, BackboneKind::kDsTcn);
  EXPECT_EQ(cfg.model.backbone.hidden_channels, 256);
  EXPECT_EQ(cfg.model.features.num_mels, 40);
}

TEST(RunConfigTest, BackboneKindSelectsItsDefaults) {
  const auto cfg = ParseRunConfig(
      json::parse(R"({"model": {"backbone": {"kind": "mdtc", "kernel_size": 3}}})"));
  EXPECT_EQ(cfg.model.backbone.kind, BackboneKind::kMdtc);
  EXPECT_EQ(cfg.model.backbone.hidden_channels, 64);
  EXPECT_EQ(cfg.model.backbone.kernel_size, 3);
}

TEST(RunConfigTest, NestedOverrides) {
  const auto cfg = ParseRunConfig(json::parse(R"({
    "model": {"num_keywords": 2, "keywords": ["a", "b"]},
    "train": {"epochs": 3, "average_top_n": 2, "loss": {"kind": "vad_max"},
              "optimizer": {"lr": 0.01}, "augment": {"speed_factors": [1.0]}}
  })"));
  EXPECT_EQ(cfg.model.num_keywords, 2);
  EXPECT_EQ(cfg.train.epochs, 3);
  EXPECT_EQ(cfg.train.loss.kind, LossKind::kVadMax);
  EXPECT_EQ(cfg.train.loss.vad_max_range, 40);
  EXPECT_EQ(cfg.train.optimizer.lr, 0.01);
  EXPECT_EQ(cfg.train.optimizer.beta2, 0.999);
  EXPECT_EQ(cfg.train.augment.speed_factors, std::vector<double>{1.0});
}

TEST(RunConfigTest, UnknownKeysAreErrors) {
  for (const char* text : {
           R"({"trian": {}})",
           R"({"train": {"epoch": 3}})",
           R"({"train": {"loss": {"knd": "vad_max"}}})",
           R"({"model": {"backbone": {"hidden": 8}}})",
           R"({"model": {"features": {"mels": 8}}})",
       }) {
    try {
      ParseRunConfig(json::parse(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
      EXPECT_NE(std::string(e.what()).find("unknown config key"), std::string::npos);
    }
  }
}

TEST(RunConfigTest, BadValuesAreErrors) {
  for (const char* text : {
           R"({"model": {"backbone": {"kind": "tcnn"}}})",
           R"({"train": {"loss": {"kind": 3}}})",
           R"({"train": {"epochs": "many"}})",
           R"({"train": {"epochs": 5, "average_top_n": 6}})",
           R"({"model": {"backbone": {"kind": "gds_tcn", "groups": 3}}})",
           R"({"model": {"input_dim": 41}})",
           R"([1, 2])",
       }) {
    EXPECT_EQ(ErrorCodeOf([&] { ParseRunConfig(json::parse(text)); }),
              ErrorCode::kInvalidConfig)
        << text;
  }
}

TEST(RunConfigTest, LoadFromFile) {
  const auto dir = testing::TempDir("run_config");
  std::ofstream(dir + "/c.json") << R"({"train": {"epochs": 2, "average_top_n": 1}})";
  EXPECT_EQ(LoadRunConfig(dir + "/c.json").train.epochs, 2);
  std::ofstream(dir + "/bad.json") << "{";
  EXPECT_EQ(ErrorCodeOf([&] { LoadRunConfig(dir + "/bad.json"); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(ErrorCodeOf([&] { LoadRunConfig(dir + "/none.json"); }),
            ErrorCode::kIoError);
}

}  // namespace
}  // namespace kws
