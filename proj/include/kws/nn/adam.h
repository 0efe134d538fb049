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


#ifndef KWS_NN_ADAM_H_
#define KWS_NN_ADAM_H_

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/nn/tensor.h"

namespace kws::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // classic L2: added to the gradient
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AdamConfig, lr, beta1, beta2, eps,
                                   weight_decay)

struct AdamState {
  int64_t step = 0;
  std::vector<float> m;
  std::vector<float> v;
};

template <typename T>
void AdamStep(Parameter<T>& param, AdamState& state, const AdamConfig& cfg) {
  auto& value = param.value().data;
  const auto& grad = param.grad().data;
  if (state.m.size() != value.size()) {
    state.m.assign(value.size(), 0.0);
    state.v.assign(value.size(), 0.0);
  }
  for (const T& g : grad) {
    if (!std::isfinite(g)) {
      throw Error(ErrorCode::kNonFiniteGradient, "parameter " + param.name);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i] + cfg.weight_decay * value[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    value[i] = static_cast<T>(value[i] -
                              cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

// Scales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
template <typename T>
double ClipGradNorm(std::vector<Parameter<T>*> params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) {
    for (const T& g : p->grad().data) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (auto* p : params) {
      for (T& g : p->grad().data) g = static_cast<T>(g * scale);
    }
  }
  return norm;
}

}  // namespace kws::nn

#endif  // KWS_NN_ADAM_H_
