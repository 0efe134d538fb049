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


#ifndef KWS_NN_TENSOR_H_
#define KWS_NN_TENSOR_H_

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "kws/common.h"

namespace kws::nn {

inline std::string ShapeString(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Vectorized kernels choose their loop peeling from the address of the
// first element, which changes the order of floating-point additions. With
// every buffer on a 64-byte boundary the results no longer depend on where
// the allocator happened to place them.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}  // NOLINT

  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  AlignedVector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, T fill = T(0))
      : shape(std::move(s)), data(NumElements(shape), fill) {}

  static size_t NumElements(const std::vector<int64_t>& s) {
    return static_cast<size_t>(std::accumulate(
        s.begin(), s.end(), int64_t{1}, std::multiplies<int64_t>()));
  }

  size_t numel() const { return data.size(); }
  int64_t dim(size_t axis) const { return shape[axis]; }
  size_t rank() const { return shape.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  void Fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> Cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <typename T>
void CheckFinite(const Tensor<T>& t, const char* where) {
  // x - x is zero for finite x and NaN for inf or NaN; the sum vectorizes.
  T acc = T(0);
  for (const T& v : t.data) acc += v - v;
  if (acc != T(0)) {
    throw Error(ErrorCode::kNonFiniteValue,
                std::string("non-finite value produced by ") + where);
  }
}

// A value in the computation graph. grad is allocated on first use.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool recorded = false;  // produced by an op on a tape

  Tensor<T>& Grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
    return grad;
  }
  void ZeroGrad() {
    if (grad.shape == value.shape) {
      grad.Fill(T(0));
    } else {
      grad = Tensor<T>(value.shape);
    }
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> MakeVar(Tensor<T> value, bool requires_grad = false) {
  auto v = std::make_shared<Node<T>>();
  v->value = std::move(value);
  v->requires_grad = requires_grad;
  return v;
}

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;

  Tensor<T>& value() { return var->value; }
  const Tensor<T>& value() const { return var->value; }
  Tensor<T>& grad() { return var->Grad(); }
};

// Records backward closures in forward order; Backward replays them in
// reverse. A tape is single-use per forward pass.
template <typename T>
class Tape {
 public:
  void Record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
  size_t size() const { return steps_.size(); }
  void Clear() { steps_.clear(); }

  void Backward(const Var<T>& loss) {
    if (!loss || !loss->recorded || steps_.empty()) {
      throw Error(ErrorCode::kGraphNotRecorded,
                  "backward called on a value with no recorded graph");
    }
    if (loss->value.numel() != 1) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "backward needs a scalar loss, got " +
                      ShapeString(loss->value.shape));
    }
    loss->Grad().data[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

}  // namespace kws::nn

#endif  // KWS_NN_TENSOR_H_
