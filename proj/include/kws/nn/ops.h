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


#ifndef KWS_NN_OPS_H_
#define KWS_NN_OPS_H_

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "kws/common.h"
#include "kws/nn/tensor.h"

namespace kws::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MatMap<T> Mat(T* p, int64_t rows, int64_t cols, int64_t ld) {
  return MatMap<T>(p, rows, cols, Eigen::OuterStride<>(ld));
}
template <typename T>
ConstMatMap<T> Mat(const T* p, int64_t rows, int64_t cols, int64_t ld) {
  return ConstMatMap<T>(p, rows, cols, Eigen::OuterStride<>(ld));
}

namespace internal {

template <typename T>
bool AnyRequiresGrad(std::initializer_list<const Node<T>*> nodes) {
  for (const Node<T>* n : nodes) {
    if (n && n->requires_grad) return true;
  }
  return false;
}

// Marks out as produced by a recorded op and registers fn when gradients
// are needed.
template <typename T, typename Fn>
void Record(Tape<T>* tape, const Var<T>& out,
            std::initializer_list<const Node<T>*> inputs, Fn&& fn) {
  if (!tape) return;
  out->recorded = true;
  if (AnyRequiresGrad<T>(inputs)) {
    out->requires_grad = true;
    tape->Record(std::forward<Fn>(fn));
  }
}

inline void Require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorCode::kDimensionMismatch, what);
}

}  // namespace internal

// y = x W + b over the last axis; x may have any number of leading axes.
template <typename T>
Var<T> Linear(Tape<T>* tape, const Var<T>& x, Parameter<T>& w,
              Parameter<T>* b) {
  const auto& xs = x->value.shape;
  internal::Require(w.value().rank() == 2 && !xs.empty() &&
                        xs.back() == w.value().dim(0),
                    "linear " + w.name + ": input " + ShapeString(xs) +
                        " vs weight " + ShapeString(w.value().shape));
  const int64_t din = w.value().dim(0);
  const int64_t dout = w.value().dim(1);
  if (b) {
    internal::Require(b->value().numel() == static_cast<size_t>(dout),
                      "linear bias " + b->name);
  }
  const int64_t rows = static_cast<int64_t>(x->value.numel()) / din;
  std::vector<int64_t> ys = xs;
  ys.back() = dout;
  auto y = MakeVar(Tensor<T>(ys));
  auto Y = Mat(y->value.ptr(), rows, dout, dout);
  Y.noalias() = Mat(x->value.ptr(), rows, din, din) *
                Mat(w.value().ptr(), din, dout, dout);
  if (b) Y.rowwise() += Mat(b->value().ptr(), 1, dout, dout).row(0);
  CheckFinite(y->value, "linear");
  Node<T>* bn = b ? b->var.get() : nullptr;
  Node<T>* wn = w.var.get();
  internal::Record(tape, y, {x.get(), wn, bn}, [x, y, wn, bn, rows, din, dout] {
    auto dY = Mat(y->Grad().ptr(), rows, dout, dout);
    if (x->requires_grad) {
      Mat(x->Grad().ptr(), rows, din, din).noalias() +=
          dY * Mat(wn->value.ptr(), din, dout, dout).transpose();
    }
    if (wn->requires_grad) {
      Mat(wn->Grad().ptr(), din, dout, dout).noalias() +=
          Mat(x->value.ptr(), rows, din, din).transpose() * dY;
    }
    if (bn && bn->requires_grad) {
      Mat(bn->Grad().ptr(), 1, dout, dout) += dY.colwise().sum();
    }
  });
  return y;
}

struct ConvGeometry {
  int64_t kernel = 1;
  int64_t dilation = 1;
  int64_t groups = 1;

  int64_t context() const { return (kernel - 1) * dilation; }
  // Frame offset into the past read by tap k.
  int64_t shift(int64_t k) const { return (kernel - 1 - k) * dilation; }
};

// y[t] = b + sum_k W[k] . x[t - (K-1-k) d], with x[tau] = 0 for tau < 0.
// x: [B, T, Cin]; weight: [K, Cin / groups, Cout]; bias: [Cout] or null.
template <typename T>
Var<T> CausalConv1d(Tape<T>* tape, const Var<T>& x, Parameter<T>& w,
                    Parameter<T>* b, int64_t dilation, int64_t groups) {
  const auto& xs = x->value.shape;
  const auto& ws = w.value().shape;
  internal::Require(xs.size() == 3 && ws.size() == 3,
                    "conv " + w.name + ": rank");
  const int64_t B = xs[0], T_ = xs[1], cin = xs[2];
  const int64_t K = ws[0], cin_pg = ws[1], cout = ws[2];
  internal::Require(K >= 1 && dilation >= 1 && groups >= 1 &&
                        cin % groups == 0 && cout % groups == 0 &&
                        cin / groups == cin_pg,
                    "conv " + w.name + ": input " + ShapeString(xs) +
                        " vs weight " + ShapeString(ws) + " groups " +
                        std::to_string(groups));
  if (b) {
    internal::Require(b->value().numel() == static_cast<size_t>(cout),
                      "conv bias " + b->name);
  }
  const ConvGeometry geo{K, dilation, groups};
  const int64_t cout_pg = cout / groups;
  const bool depthwise = cin_pg == 1 && cout_pg == 1;
  auto y = MakeVar(Tensor<T>({B, T_, cout}));
  const T* X = x->value.ptr();
  const T* W = w.value().ptr();
  T* Y = y->value.ptr();
  if (b) {
    const T* bias = b->value().ptr();
    for (int64_t r = 0; r < B * T_; ++r) {
      std::copy(bias, bias + cout, Y + r * cout);
    }
  }
  for (int64_t bi = 0; bi < B; ++bi) {
    const T* xb = X + bi * T_ * cin;
    T* yb = Y + bi * T_ * cout;
    for (int64_t k = 0; k < K; ++k) {
      const int64_t s = geo.shift(k);
      if (s >= T_) continue;
      const int64_t rows = T_ - s;
      if (depthwise) {
        const T* wk = W + k * cout;
        for (int64_t t = 0; t < rows; ++t) {
          const T* xr = xb + t * cin;
          T* yr = yb + (t + s) * cout;
          for (int64_t c = 0; c < cout; ++c) yr[c] += wk[c] * xr[c];
        }
        continue;
      }
      for (int64_t g = 0; g < groups; ++g) {
        Mat(yb + s * cout + g * cout_pg, rows, cout_pg, cout).noalias() +=
            Mat(xb + g * cin_pg, rows, cin_pg, cin) *
            Mat(W + k * cin_pg * cout + g * cout_pg, cin_pg, cout_pg, cout);
      }
    }
  }
  CheckFinite(y->value, "causal_conv1d");
  Node<T>* wn = w.var.get();
  Node<T>* bn = b ? b->var.get() : nullptr;
  internal::Record(tape, y, {x.get(), wn, bn}, [=] {
    const T* dY = y->Grad().ptr();
    T* dX = x->requires_grad ? x->Grad().ptr() : nullptr;
    T* dW = wn->requires_grad ? wn->Grad().ptr() : nullptr;
    const T* Xv = x->value.ptr();
    const T* Wv = wn->value.ptr();
    if (bn && bn->requires_grad) {
      Mat(bn->Grad().ptr(), 1, cout, cout) +=
          Mat(dY, B * T_, cout, cout).colwise().sum();
    }
    for (int64_t bi = 0; bi < B; ++bi) {
      const T* xb = Xv + bi * T_ * cin;
      const T* dyb = dY + bi * T_ * cout;
      for (int64_t k = 0; k < K; ++k) {
        const int64_t s = geo.shift(k);
        if (s >= T_) continue;
        const int64_t rows = T_ - s;
        if (depthwise) {
          const T* wk = Wv + k * cout;
          for (int64_t t = 0; t < rows; ++t) {
            const T* dyr = dyb + (t + s) * cout;
            if (dX) {
              T* dxr = dX + (bi * T_ + t) * cin;
              for (int64_t c = 0; c < cout; ++c) dxr[c] += wk[c] * dyr[c];
            }
            if (dW) {
              const T* xr = xb + t * cin;
              T* dwk = dW + k * cout;
              for (int64_t c = 0; c < cout; ++c) dwk[c] += xr[c] * dyr[c];
            }
          }
          continue;
        }
        for (int64_t g = 0; g < groups; ++g) {
          auto dYs = Mat(dyb + s * cout + g * cout_pg, rows, cout_pg, cout);
          if (dX) {
            Mat(dX + bi * T_ * cin + g * cin_pg, rows, cin_pg, cin).noalias() +=
                dYs * Mat(Wv + k * cin_pg * cout + g * cout_pg, cin_pg, cout_pg,
                          cout)
                          .transpose();
          }
          if (dW) {
            Mat(dW + k * cin_pg * cout + g * cout_pg, cin_pg, cout_pg, cout)
                .noalias() +=
                Mat(xb + g * cin_pg, rows, cin_pg, cin).transpose() * dYs;
          }
        }
      }
    }
  });
  return y;
}

struct BatchNormOptions {
  bool train = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization of x: [B, T, C]. In train mode statistics come
// from the valid frames (t < lengths[b]) only and the running statistics are
// updated; padded output frames are zero. lengths may be empty (all valid).
template <typename T>
Var<T> BatchNorm(Tape<T>* tape, const Var<T>& x, Parameter<T>& gamma,
                 Parameter<T>& beta, Parameter<T>& running_mean,
                 Parameter<T>& running_var, const std::vector<int64_t>& lengths,
                 const BatchNormOptions& opt) {
  const auto& xs = x->value.shape;
  internal::Require(xs.size() == 3, "batchnorm " + gamma.name + ": rank");
  const int64_t B = xs[0], T_ = xs[1], C = xs[2];
  internal::Require(
      gamma.value().numel() == static_cast<size_t>(C) &&
          beta.value().numel() == static_cast<size_t>(C) &&
          running_mean.value().numel() == static_cast<size_t>(C) &&
          running_var.value().numel() == static_cast<size_t>(C),
      "batchnorm " + gamma.name + ": channels " + std::to_string(C));
  internal::Require(lengths.empty() || static_cast<int64_t>(lengths.size()) == B,
                    "batchnorm lengths");
  auto valid = [lens = lengths, T_](int64_t bi) {
    return lens.empty() ? T_ : std::min<int64_t>(lens[bi], T_);
  };
  auto y = MakeVar(Tensor<T>(xs));
  const T* X = x->value.ptr();
  T* Y = y->value.ptr();
  const T* g = gamma.value().ptr();
  const T* be = beta.value().ptr();
  std::vector<T> mean(C, T(0)), inv_std(C, T(0));
  int64_t count = 0;
  if (opt.train) {
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    for (int64_t bi = 0; bi < B; ++bi) {
      for (int64_t t = 0; t < valid(bi); ++t) {
        const T* r = X + (bi * T_ + t) * C;
        for (int64_t c = 0; c < C; ++c) sum[c] += r[c];
      }
      count += valid(bi);
    }
    internal::Require(count > 0, "batchnorm: no valid frames");
    for (int64_t c = 0; c < C; ++c) sum[c] /= static_cast<double>(count);
    for (int64_t bi = 0; bi < B; ++bi) {
      for (int64_t t = 0; t < valid(bi); ++t) {
        const T* r = X + (bi * T_ + t) * C;
        for (int64_t c = 0; c < C; ++c) {
          const double d = r[c] - sum[c];
          sq[c] += d * d;
        }
      }
    }
    T* rm = running_mean.value().ptr();
    T* rv = running_var.value().ptr();
    for (int64_t c = 0; c < C; ++c) {
      const double var = sq[c] / static_cast<double>(count);
      mean[c] = static_cast<T>(sum[c]);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased =
          count > 1 ? sq[c] / static_cast<double>(count - 1) : var;
      rm[c] = static_cast<T>((1.0 - opt.momentum) * rm[c] +
                             opt.momentum * sum[c]);
      rv[c] = static_cast<T>((1.0 - opt.momentum) * rv[c] +
                             opt.momentum * unbiased);
    }
  } else {
    const T* rm = running_mean.value().ptr();
    const T* rv = running_var.value().ptr();
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(double(rv[c]) + opt.eps));
    }
  }
  for (int64_t bi = 0; bi < B; ++bi) {
    const int64_t n = opt.train ? valid(bi) : T_;
    for (int64_t t = 0; t < n; ++t) {
      const T* r = X + (bi * T_ + t) * C;
      T* o = Y + (bi * T_ + t) * C;
      for (int64_t c = 0; c < C; ++c) {
        o[c] = (r[c] - mean[c]) * inv_std[c] * g[c] + be[c];
      }
    }
  }
  CheckFinite(y->value, "batchnorm");
  Node<T>* gn = gamma.var.get();
  Node<T>* bn = beta.var.get();
  const bool train = opt.train;
  internal::Record(tape, y, {x.get(), gn, bn}, [=] {
    const T* dY = y->Grad().ptr();
    const T* Xv = x->value.ptr();
    const T* gv = gn->value.ptr();
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (int64_t bi = 0; bi < B; ++bi) {
      const int64_t n = train ? valid(bi) : T_;
      for (int64_t t = 0; t < n; ++t) {
        const T* r = Xv + (bi * T_ + t) * C;
        const T* d = dY + (bi * T_ + t) * C;
        for (int64_t c = 0; c < C; ++c) {
          const double xhat = (r[c] - mean[c]) * inv_std[c];
          sum_dy[c] += d[c];
          sum_dy_xhat[c] += d[c] * xhat;
        }
      }
    }
    if (gn->requires_grad) {
      T* dg = gn->Grad().ptr();
      for (int64_t c = 0; c < C; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
    }
    if (bn->requires_grad) {
      T* db = bn->Grad().ptr();
      for (int64_t c = 0; c < C; ++c) db[c] += static_cast<T>(sum_dy[c]);
    }
    if (!x->requires_grad) return;
    T* dX = x->Grad().ptr();
    for (int64_t bi = 0; bi < B; ++bi) {
      const int64_t n = train ? valid(bi) : T_;
      for (int64_t t = 0; t < n; ++t) {
        const T* r = Xv + (bi * T_ + t) * C;
        const T* d = dY + (bi * T_ + t) * C;
        T* dx = dX + (bi * T_ + t) * C;
        for (int64_t c = 0; c < C; ++c) {
          if (train) {
            const double xhat = (r[c] - mean[c]) * inv_std[c];
            const double nn = static_cast<double>(count);
            dx[c] += static_cast<T>(gv[c] * inv_std[c] *
                                    (d[c] - sum_dy[c] / nn -
                                     xhat * sum_dy_xhat[c] / nn));
          } else {
            dx[c] += d[c] * gv[c] * inv_std[c];
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
Var<T> Relu(Tape<T>* tape, const Var<T>& x) {
  auto y = MakeVar(Tensor<T>(x->value.shape));
  const size_t n = x->value.numel();
  for (size_t i = 0; i < n; ++i) {
    y->value.data[i] = std::max(x->value.data[i], T(0));
  }
  internal::Record(tape, y, {x.get()}, [x, y, n] {
    T* dx = x->Grad().ptr();
    const T* dy = y->Grad().ptr();
    const T* xv = x->value.ptr();
    for (size_t i = 0; i < n; ++i) dx[i] += xv[i] > T(0) ? dy[i] : T(0);
  });
  return y;
}

// Branch form avoids exp overflow on either side.
template <typename T>
T StableSigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// Posterior bounds used everywhere a probability may reach a logarithm. The
// upper bound is the largest value of T strictly below one when 1 - 1e-8
// rounds to one.
template <typename T>
constexpr T PosteriorFloor() {
  return T(1e-8);
}
template <typename T>
T PosteriorCeil() {
  const T c = T(1) - T(1e-8);
  return c < T(1) ? c : std::nextafter(T(1), T(0));
}

// sigmoid(x) clamped into [PosteriorFloor, PosteriorCeil]; gradient is zero
// where the clamp is active.
template <typename T>
Var<T> Sigmoid(Tape<T>* tape, const Var<T>& x, bool clamp = true) {
  auto y = MakeVar(Tensor<T>(x->value.shape));
  const size_t n = x->value.numel();
  const T lo = PosteriorFloor<T>(), hi = PosteriorCeil<T>();
  std::vector<unsigned char> active(n, 1);
  for (size_t i = 0; i < n; ++i) {
    T s = StableSigmoid(x->value.data[i]);
    if (clamp && (s < lo || s > hi)) {
      s = std::clamp(s, lo, hi);
      active[i] = 0;
    }
    y->value.data[i] = s;
  }
  internal::Record(tape, y, {x.get()}, [x, y, n, active = std::move(active)] {
    T* dx = x->Grad().ptr();
    const T* dy = y->Grad().ptr();
    for (size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      const T s = y->value.data[i];
      dx[i] += dy[i] * s * (T(1) - s);
    }
  });
  return y;
}

template <typename T>
Var<T> Add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  internal::Require(a->value.shape == b->value.shape,
                    "add: " + ShapeString(a->value.shape) + " vs " +
                        ShapeString(b->value.shape));
  auto y = MakeVar(a->value);
  for (size_t i = 0; i < y->value.numel(); ++i) {
    y->value.data[i] += b->value.data[i];
  }
  CheckFinite(y->value, "add");
  internal::Record(tape, y, {a.get(), b.get()}, [a, b, y] {
    const auto& dy = y->Grad().data;
    for (const auto& in : {a, b}) {
      if (!in->requires_grad) continue;
      auto& dx = in->Grad().data;
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
  return y;
}

// Inverted dropout; identity when p == 0 or not training.
template <typename T>
Var<T> Dropout(Tape<T>* tape, const Var<T>& x, double p, uint64_t seed) {
  if (p <= 0.0) return x;
  auto y = MakeVar(Tensor<T>(x->value.shape));
  std::mt19937_64 rng(seed);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x->value.numel());
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = UniformReal(rng) < p ? T(0) : keep;
    y->value.data[i] = x->value.data[i] * mask[i];
  }
  internal::Record(tape, y, {x.get()}, [x, y, mask = std::move(mask)] {
    T* dx = x->Grad().ptr();
    const T* dy = y->Grad().ptr();
    for (size_t i = 0; i < mask.size(); ++i) dx[i] += dy[i] * mask[i];
  });
  return y;
}

// Per-feature affine map out = (x - shift) * scale with frozen statistics.
template <typename T>
Var<T> FrameAffine(Tape<T>* tape, const Var<T>& x,
                   const std::vector<double>& shift,
                   const std::vector<double>& scale) {
  const int64_t D = x->value.shape.back();
  internal::Require(static_cast<int64_t>(shift.size()) == D &&
                        static_cast<int64_t>(scale.size()) == D,
                    "cmvn: feature dim " + std::to_string(D) + " vs stats " +
                        std::to_string(shift.size()));
  auto y = MakeVar(Tensor<T>(x->value.shape));
  const size_t rows = x->value.numel() / D;
  for (size_t r = 0; r < rows; ++r) {
    for (int64_t d = 0; d < D; ++d) {
      y->value.data[r * D + d] =
          static_cast<T>((x->value.data[r * D + d] - shift[d]) * scale[d]);
    }
  }
  CheckFinite(y->value, "cmvn");
  internal::Record(tape, y, {x.get()}, [x, y, rows, D, scale] {
    T* dx = x->Grad().ptr();
    const T* dy = y->Grad().ptr();
    for (size_t r = 0; r < rows; ++r) {
      for (int64_t d = 0; d < D; ++d) {
        dx[r * D + d] += static_cast<T>(dy[r * D + d] * scale[d]);
      }
    }
  });
  return y;
}

// K independent single-output classifiers sharing the input; output [.., K].
template <typename T>
Var<T> Heads(Tape<T>* tape, const Var<T>& x,
             const std::vector<Parameter<T>*>& weights,
             const std::vector<Parameter<T>*>& biases) {
  const int64_t H = x->value.shape.back();
  const auto K = static_cast<int64_t>(weights.size());
  internal::Require(K >= 1 && biases.size() == weights.size(),
                    "heads: weight/bias count");
  RowMat<T> W(H, K);
  RowMat<T> bias(1, K);
  for (int64_t k = 0; k < K; ++k) {
    internal::Require(
        weights[k]->value().numel() == static_cast<size_t>(H) &&
            biases[k]->value().numel() == 1,
        "head " + weights[k]->name + ": expects [" + std::to_string(H) +
            "x1]");
    for (int64_t h = 0; h < H; ++h) W(h, k) = weights[k]->value().data[h];
    bias(0, k) = biases[k]->value().data[0];
  }
  const int64_t rows = static_cast<int64_t>(x->value.numel()) / H;
  std::vector<int64_t> ys = x->value.shape;
  ys.back() = K;
  auto y = MakeVar(Tensor<T>(ys));
  auto Y = Mat(y->value.ptr(), rows, K, K);
  Y.noalias() = Mat(x->value.ptr(), rows, H, H) * W;
  Y.rowwise() += bias.row(0);
  CheckFinite(y->value, "heads");
  std::vector<Node<T>*> wn, bn;
  for (int64_t k = 0; k < K; ++k) {
    wn.push_back(weights[k]->var.get());
    bn.push_back(biases[k]->var.get());
  }
  bool params_need_grad = false;
  for (int64_t k = 0; k < K; ++k) {
    params_need_grad |= wn[k]->requires_grad || bn[k]->requires_grad;
  }
  if (tape) {
    y->recorded = true;
    if (x->requires_grad || params_need_grad) {
      y->requires_grad = true;
      tape->Record([x, y, W, wn, bn, rows, H, K] {
        auto dY = Mat(y->Grad().ptr(), rows, K, K);
        if (x->requires_grad) {
          Mat(x->Grad().ptr(), rows, H, H).noalias() += dY * W.transpose();
        }
        RowMat<T> dW = Mat(x->value.ptr(), rows, H, H).transpose() * dY;
        RowMat<T> db = dY.colwise().sum();
        for (int64_t k = 0; k < K; ++k) {
          if (wn[k]->requires_grad) {
            T* g = wn[k]->Grad().ptr();
            for (int64_t h = 0; h < H; ++h) g[h] += dW(h, k);
          }
          if (bn[k]->requires_grad) bn[k]->Grad().data[0] += db(0, k);
        }
      });
    }
  }
  return y;
}

// sum_i weights[i] * x[i]; the scalar probe used by gradient checks.
template <typename T>
Var<T> WeightedSum(Tape<T>* tape, const Var<T>& x, const Tensor<T>& weights) {
  internal::Require(weights.numel() == x->value.numel(), "weighted sum");
  auto y = MakeVar(Tensor<T>({1}));
  T acc = T(0);
  for (size_t i = 0; i < weights.numel(); ++i) {
    acc += weights.data[i] * x->value.data[i];
  }
  y->value.data[0] = acc;
  internal::Record(tape, y, {x.get()}, [x, y, weights] {
    const T g = y->Grad().data[0];
    T* dx = x->Grad().ptr();
    for (size_t i = 0; i < weights.numel(); ++i) dx[i] += g * weights.data[i];
  });
  return y;
}

}  // namespace kws::nn

#endif  // KWS_NN_OPS_H_
