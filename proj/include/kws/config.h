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


#ifndef KWS_CONFIG_H_
#define KWS_CONFIG_H_

#include <fstream>
#include <string>

#include "json.hpp"
#include "kws/common.h"
#include "kws/model.h"
#include "kws/trainer.h"

namespace kws {

// Everything a training run needs besides its data. Feature settings live
// under model.features so that a model file describes its own front end.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, model, train)

namespace internal {

// Every key of `given` must also appear in `known` (the serialized defaults)
// at the same path.
inline void RejectUnknownKeys(const nlohmann::json& given,
                              const nlohmann::json& known,
                              const std::string& path) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!known.contains(key)) {
      throw Error(ErrorCode::kInvalidConfig, "unknown config key " + here);
    }
    RejectUnknownKeys(value, known.at(key), here);
  }
}

// Enum strings map to the first enumerator when unrecognized; reject them
// instead.
template <typename Enum>
void CheckEnum(const nlohmann::json& j, const std::string& pointer) {
  const nlohmann::json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) return;
  const auto& given = j.at(ptr);
  if (!given.is_string() || nlohmann::json(given.get<Enum>()) != given) {
    throw Error(ErrorCode::kInvalidConfig,
                "bad value " + given.dump() + " for " + pointer.substr(1));
  }
}

}  // namespace internal

inline RunConfig ParseRunConfig(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  }
  internal::RejectUnknownKeys(j, nlohmann::json(RunConfig{}), "");
  internal::CheckEnum<BackboneKind>(j, "/model/backbone/kind");
  internal::CheckEnum<LossKind>(j, "/train/loss/kind");
  RunConfig cfg;
  try {
    // Unset backbone fields take the documented defaults of the chosen kind.
    RunConfig defaults;
    const auto kind = j.value(nlohmann::json::json_pointer("/model/backbone/kind"),
                              nlohmann::json());
    if (!kind.is_null()) {
      defaults.model.backbone = DefaultBackbone(kind.get<BackboneKind>());
    }
    nlohmann::json merged = defaults;
    merged.merge_patch(j);
    cfg = merged.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  cfg.model.features.Validate();
  ValidateConfig(cfg.model);
  if (cfg.model.input_dim != cfg.model.features.num_mels) {
    throw Error(ErrorCode::kInvalidConfig,
                "model.input_dim must equal model.features.num_mels");
  }
  cfg.train.Validate();
  return cfg;
}

inline RunConfig LoadRunConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path + ": " + e.what());
  }
  return ParseRunConfig(j);
}

}  // namespace kws

#endif  // KWS_CONFIG_H_
