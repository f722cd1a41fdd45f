// SPDX-License-Identifier: Apache-2.0
//
// 1-D layers with explicit forward/backward passes. Layers keep only what
// their own backward pass needs; inputs are passed back in by the caller.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "defectkit/nn/tensor.hpp"
#include "defectkit/rng.hpp"

namespace defectkit::nn {

template <typename T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }
  std::size_t size() const { return value.size(); }
};

/// Uniform on [-limit, limit] with limit = sqrt(6 / fan_in).
template <typename T>
void init_fan_in_uniform(Param<T>& p, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init/" + p.name));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : p.value) v = static_cast<T>(rng.uniform(-limit, limit));
}

/// Zero-padded "same" convolution, stride 1. Weight layout [out][in][k].
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t in, std::size_t out, std::size_t k)
      : in_(in), out_(out), k_(k), weight(name + ".weight", {out, in, k}), bias(name + ".bias", {out}) {}

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }
  void init(std::uint64_t seed) { init_fan_in_uniform(weight, in_ * k_, seed); }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.channels != in_) throw UsageError("nn", weight.name + ": expected " + std::to_string(in_) + " input channels");
    const std::size_t L = x.length;
    Tensor<T> y(x.batch, out_, L);
    std::vector<T> xp;
    for (std::size_t b = 0; b < x.batch; ++b) {
      const std::size_t stride = pad_rows(x, b, (k_ - 1) / 2, xp);
      kernels::correlate(xp.data(), stride, in_, weight.value.data(), bias.value.data(), out_, k_, y.row(b, 0), L, L);
    }
    return y;
  }

  /// Accumulates parameter gradients; returns the input gradient.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
    const std::size_t L = x.length;
    Tensor<T> dx(x.batch, in_, L);
    // The input gradient is a correlation of dy with the kernel transposed
    // over channels and reversed in time.
    std::vector<T> flipped(weight.size());
    for (std::size_t co = 0; co < out_; ++co) {
      for (std::size_t ci = 0; ci < in_; ++ci) {
        for (std::size_t kk = 0; kk < k_; ++kk) {
          flipped[(ci * out_ + co) * k_ + (k_ - 1 - kk)] = weight.value[(co * in_ + ci) * k_ + kk];
        }
      }
    }
    const std::size_t pad = (k_ - 1) / 2;
    std::vector<T> xp, dyp;
    for (std::size_t b = 0; b < x.batch; ++b) {
      const std::size_t xs = pad_rows(x, b, pad, xp);
      for (std::size_t co = 0; co < out_; ++co) {
        const T* dyr = dy.row(b, co);
        bias.grad[co] += kernels::sum(dyr, L);
        T* g = &weight.grad[co * in_ * k_];
        for (std::size_t ci = 0; ci < in_; ++ci) kernels::shifted_dots(dyr, xp.data() + ci * xs, L, k_, g + ci * k_);
      }
      const std::size_t ds = pad_rows(dy, b, k_ - 1 - pad, dyp);
      kernels::correlate(dyp.data(), ds, out_, flipped.data(), static_cast<const T*>(nullptr), in_, k_, dx.row(b, 0), L,
                         L);
    }
    return dx;
  }

  std::size_t in_ = 0, out_ = 0, k_ = 1;
  Param<T> weight, bias;

 private:
  // Copies item b of t into zero-padded rows with `left` leading zeros and
  // room for the kernel's tiled reads. Returns the row stride.
  std::size_t pad_rows(const Tensor<T>& t, std::size_t b, std::size_t left, std::vector<T>& out) const {
    const std::size_t stride = t.length + k_ - 1 + kernels::kTile<T>;
    out.assign(t.channels * stride, T(0));
    for (std::size_t c = 0; c < t.channels; ++c) {
      std::copy(t.row(b, c), t.row(b, c) + t.length, out.data() + c * stride + left);
    }
    return stride;
  }
};

/// Transposed convolution producing length * stride outputs. Input sample i
/// contributes to outputs i * stride + kk - pad with pad = (k - stride) / 2.
/// Weight layout [in][out][k].
template <typename T>
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride)
      : in_(in), out_(out), k_(k), stride_(stride), weight(name + ".weight", {in, out, k}), bias(name + ".bias", {out}) {}

  std::size_t stride() const { return stride_; }
  std::size_t out_channels() const { return out_; }
  void init(std::uint64_t seed) { init_fan_in_uniform(weight, in_ * k_, seed); }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.channels != in_) throw UsageError("nn", weight.name + ": expected " + std::to_string(in_) + " input channels");
    const std::size_t Lo = x.length * stride_;
    Tensor<T> y(x.batch, out_, Lo);
    for (std::size_t b = 0; b < x.batch; ++b) {
      for (std::size_t co = 0; co < out_; ++co) {
        T* yr = y.row(b, co);
        std::fill(yr, yr + Lo, bias.value[co]);
        for (std::size_t ci = 0; ci < in_; ++ci) {
          const T* xr = x.row(b, ci);
          for (std::size_t kk = 0; kk < k_; ++kk) {
            const T w = weight.value[(ci * out_ + co) * k_ + kk];
            const auto [i0, n, off] = span_for(kk, x.length);
            if (stride_ == 1) {
              if (n > 0) axpy(w, xr + i0, yr + i0 + off, n);
            } else {
              for (std::size_t i = i0; i < i0 + n; ++i) yr[i * stride_ + off] += w * xr[i];
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.batch, in_, x.length);
    for (std::size_t b = 0; b < x.batch; ++b) {
      for (std::size_t co = 0; co < out_; ++co) {
        const T* dyr = dy.row(b, co);
        T s = T(0);
        for (std::size_t t = 0; t < dy.length; ++t) s += dyr[t];
        bias.grad[co] += s;
        for (std::size_t ci = 0; ci < in_; ++ci) {
          const T* xr = x.row(b, ci);
          T* dxr = dx.row(b, ci);
          for (std::size_t kk = 0; kk < k_; ++kk) {
            const std::size_t wi = (ci * out_ + co) * k_ + kk;
            const T w = weight.value[wi];
            const auto [i0, n, off] = span_for(kk, x.length);
            if (n == 0) continue;
            if (stride_ == 1) {
              weight.grad[wi] += dot(xr + i0, dyr + i0 + off, n);
              axpy(w, dyr + i0 + off, dxr + i0, n);
            } else {
              T g = T(0);
              for (std::size_t i = i0; i < i0 + n; ++i) {
                const T d = dyr[i * stride_ + off];
                g += xr[i] * d;
                dxr[i] += w * d;
              }
              weight.grad[wi] += g;
            }
          }
        }
      }
    }
    return dx;
  }

  std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1;
  Param<T> weight, bias;

 private:
  struct Span {
    std::size_t i0, n;
    std::ptrdiff_t off;
  };
  // Input positions i whose output i * stride + off lands in [0, L * stride).
  Span span_for(std::size_t kk, std::size_t L) const {
    const auto s = static_cast<std::ptrdiff_t>(stride_);
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - (static_cast<std::ptrdiff_t>(k_) - s) / 2;
    const std::ptrdiff_t Lo = static_cast<std::ptrdiff_t>(L) * s;
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(L), (Lo - off + s - 1) / s);
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo), off};
  }
};

/// Per-channel batch normalisation over batch and time.
template <typename T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.99;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t c)
      : c_(c),
        gamma(name + ".gamma", {c}),
        beta(name + ".beta", {c}),
        running_mean(name + ".running_mean", {c}),
        running_var(name + ".running_var", {c}) {
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
    std::fill(running_var.value.begin(), running_var.value.end(), T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> y(x.batch, c_, x.length);
    const std::size_t L = x.length;
    if (train) {
      if (!(xhat_.batch == x.batch && xhat_.channels == c_ && xhat_.length == L)) xhat_ = Tensor<T>(x.batch, c_, L);
      inv_std_.assign(c_, T(0));
    }
    for (std::size_t c = 0; c < c_; ++c) {
      double mean, var;
      if (train) {
        std::tie(mean, var) = channel_moments(x, c);
        running_mean.value[c] = static_cast<T>(kMomentum * running_mean.value[c] + (1.0 - kMomentum) * mean);
        running_var.value[c] = static_cast<T>(kMomentum * running_var.value[c] + (1.0 - kMomentum) * var);
      } else {
        mean = running_mean.value[c];
        var = running_var.value[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      const T m = static_cast<T>(mean);
      const T g = gamma.value[c], be = beta.value[c];
      if (train) inv_std_[c] = inv;
      for (std::size_t b = 0; b < x.batch; ++b) {
        const T* r = x.row(b, c);
        T* yr = y.row(b, c);
        T* hr = train ? xhat_.row(b, c) : nullptr;
        for (std::size_t t = 0; t < L; ++t) {
          const T h = (r[t] - m) * inv;
          if (hr) hr[t] = h;
          yr[t] = g * h + be;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.batch, c_, dy.length);
    const std::size_t L = dy.length;
    const T count = static_cast<T>(dy.batch * L);
    for (std::size_t c = 0; c < c_; ++c) {
      T sum_dy = T(0), sum_dy_h = T(0);
      for (std::size_t b = 0; b < dy.batch; ++b) {
        sum_dy += kernels::sum(dy.row(b, c), L);
        sum_dy_h += kernels::dot(dy.row(b, c), xhat_.row(b, c), L);
      }
      gamma.grad[c] += sum_dy_h;
      beta.grad[c] += sum_dy;
      const T scale = gamma.value[c] * inv_std_[c] / count;
      for (std::size_t b = 0; b < dy.batch; ++b) {
        const T* d = dy.row(b, c);
        const T* h = xhat_.row(b, c);
        T* o = dx.row(b, c);
        for (std::size_t t = 0; t < L; ++t) o[t] = scale * (count * d[t] - sum_dy - h[t] * sum_dy_h);
      }
    }
    return dx;
  }

  /// Sets running statistics to the batch statistics of x.
  void freeze_to(const Tensor<T>& x) {
    for (std::size_t c = 0; c < c_; ++c) {
      const auto [mean, var] = channel_moments(x, c);
      running_mean.value[c] = static_cast<T>(mean);
      running_var.value[c] = static_cast<T>(var);
    }
  }

  /// Mean and biased variance of channel c over batch and time.
  static std::pair<double, double> channel_moments(const Tensor<T>& x, std::size_t c) {
    const double count = static_cast<double>(x.batch * x.length);
    double s = 0.0;
    for (std::size_t b = 0; b < x.batch; ++b) s += kernels::sum(x.row(b, c), x.length);
    const double mean = s / count;
    double ss = 0.0;
    for (std::size_t b = 0; b < x.batch; ++b) {
      ss += kernels::sum_sq_dev(x.row(b, c), static_cast<T>(mean), x.length);
    }
    return {mean, ss / count};
  }

  std::size_t c_ = 0;
  Param<T> gamma, beta;
  Param<T> running_mean, running_var;  ///< state, not trained

 private:
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

/// Leaky rectifier; slope 0 gives a plain rectifier.
template <typename T>
struct Activation {
  T slope = T(0.01);

  Tensor<T> forward(Tensor<T> x) const {
    const T s = slope;
    T* p = x.data.data();
    for (std::size_t i = 0, n = x.data.size(); i < n; ++i) p[i] = p[i] > T(0) ? p[i] : s * p[i];
    return x;
  }
  /// Uses the forward output: its sign matches the input's for slope >= 0.
  Tensor<T> backward(const Tensor<T>& y, Tensor<T> dy) const {
    const T s = slope;
    const T* yp = y.data.data();
    T* d = dy.data.data();
    for (std::size_t i = 0, n = dy.data.size(); i < n; ++i) d[i] = yp[i] > T(0) ? d[i] : s * d[i];
    return dy;
  }
};

/// Non-overlapping max pool; ties go to the first index.
template <typename T>
class MaxPool {
 public:
  MaxPool() = default;
  explicit MaxPool(std::size_t factor) : factor_(factor) {}
  std::size_t factor() const { return factor_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (factor_ == 0 || x.length % factor_ != 0) {
      throw UsageError("nn", "max-pool factor " + std::to_string(factor_) + " does not divide length " +
                                 std::to_string(x.length));
    }
    const std::size_t Lo = x.length / factor_;
    Tensor<T> y(x.batch, x.channels, Lo);
    argmax_.assign(y.size(), 0);
    in_length_ = x.length;
    for (std::size_t b = 0; b < x.batch; ++b) {
      for (std::size_t c = 0; c < x.channels; ++c) {
        const T* r = x.row(b, c);
        T* yr = y.row(b, c);
        std::uint32_t* ar = argmax_.data() + (b * x.channels + c) * Lo;
        if (factor_ == 2) {
          for (std::size_t t = 0; t < Lo; ++t) {
            const T a = r[2 * t], c = r[2 * t + 1];
            const bool second = c > a;
            yr[t] = second ? c : a;
            ar[t] = static_cast<std::uint32_t>(2 * t + (second ? 1 : 0));
          }
          continue;
        }
        for (std::size_t t = 0; t < Lo; ++t) {
          std::size_t best = t * factor_;
          for (std::size_t j = best + 1; j < (t + 1) * factor_; ++j) {
            if (r[j] > r[best]) best = j;
          }
          yr[t] = r[best];
          ar[t] = static_cast<std::uint32_t>(best);
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(dy.batch, dy.channels, in_length_);
    for (std::size_t b = 0; b < dy.batch; ++b) {
      for (std::size_t c = 0; c < dy.channels; ++c) {
        const T* d = dy.row(b, c);
        T* o = dx.row(b, c);
        const std::uint32_t* ar = argmax_.data() + (b * dy.channels + c) * dy.length;
        for (std::size_t t = 0; t < dy.length; ++t) o[ar[t]] += d[t];
      }
    }
    return dx;
  }

 private:
  std::size_t factor_ = 1;
  std::size_t in_length_ = 0;
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.batch != b.batch || a.length != b.length) {
    throw UsageError("nn", "concatenation of tensors with lengths " + std::to_string(a.length) + " and " +
                               std::to_string(b.length));
  }
  Tensor<T> y(a.batch, a.channels + b.channels, a.length);
  for (std::size_t n = 0; n < a.batch; ++n) {
    std::copy(a.row(n, 0), a.row(n, 0) + a.channels * a.length, y.row(n, 0));
    std::copy(b.row(n, 0), b.row(n, 0) + b.channels * b.length, y.row(n, a.channels));
  }
  return y;
}

/// Splits a channel-concatenated gradient back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& d, std::size_t first, Tensor<T>& da, Tensor<T>& db) {
  da = Tensor<T>(d.batch, first, d.length);
  db = Tensor<T>(d.batch, d.channels - first, d.length);
  for (std::size_t n = 0; n < d.batch; ++n) {
    std::copy(d.row(n, 0), d.row(n, first), da.row(n, 0));
    std::copy(d.row(n, first), d.row(n, 0) + d.channels * d.length, db.row(n, 0));
  }
}

template <typename T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace defectkit::nn
