// SPDX-License-Identifier: Apache-2.0
//
// Inner loops of the network layers, written with GCC/Clang vector extensions
// so that accumulators stay in registers.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace defectkit::nn::kernels {

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(64)));
  static constexpr std::size_t kWidth = 64 / sizeof(T);
};

template <typename T>
inline typename Vec<T>::type load(const T* p) {
  typename Vec<T>::type v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
inline void store(T* p, typename Vec<T>::type v) {
  std::memcpy(p, &v, sizeof v);
}

template <typename T>
inline T hsum(typename Vec<T>::type v) {
  T s = T(0);
  for (std::size_t i = 0; i < Vec<T>::kWidth; ++i) s += v[i];
  return s;
}

/// Sum of a[i] * b[i] over four independent vector chains.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::kWidth;
  V s0 = {}, s1 = {}, s2 = {}, s3 = {};
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    s0 += load(a + i) * load(b + i);
    s1 += load(a + i + W) * load(b + i + W);
    s2 += load(a + i + 2 * W) * load(b + i + 2 * W);
    s3 += load(a + i + 3 * W) * load(b + i + 3 * W);
  }
  for (; i + W <= n; i += W) s0 += load(a + i) * load(b + i);
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return hsum<T>((s0 + s1) + (s2 + s3)) + tail;
}

template <typename T>
T sum(const T* a, std::size_t n) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::kWidth;
  V s0 = {}, s1 = {};
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    s0 += load(a + i);
    s1 += load(a + i + W);
  }
  for (; i + W <= n; i += W) s0 += load(a + i);
  T tail = T(0);
  for (; i < n; ++i) tail += a[i];
  return hsum<T>(s0 + s1) + tail;
}

/// Sum of (a[i] - m)^2.
template <typename T>
T sum_sq_dev(const T* a, T m, std::size_t n) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::kWidth;
  V s0 = {}, s1 = {};
  const V mv = V{} + m;
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    const V d0 = load(a + i) - mv, d1 = load(a + i + W) - mv;
    s0 += d0 * d0;
    s1 += d1 * d1;
  }
  T tail = T(0);
  for (; i < n; ++i) tail += (a[i] - m) * (a[i] - m);
  return hsum<T>(s0 + s1) + tail;
}

/// out[kk] += sum_t d[t] * x[t + kk] for kk in [0, K).
template <typename T, std::size_t K>
void shifted_dots(const T* d, const T* x, std::size_t n, T* out) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::kWidth;
  V acc[K] = {};
  std::size_t t = 0;
  for (; t + W <= n; t += W) {
    const V dv = load(d + t);
#pragma GCC unroll 16
    for (std::size_t kk = 0; kk < K; ++kk) acc[kk] += dv * load(x + t + kk);
  }
  for (std::size_t kk = 0; kk < K; ++kk) {
    T tail = T(0);
    for (std::size_t i = t; i < n; ++i) tail += d[i] * x[i + kk];
    out[kk] += hsum<T>(acc[kk]) + tail;
  }
}

/// Runtime-k front end of shifted_dots.
template <typename T>
void shifted_dots(const T* d, const T* x, std::size_t n, std::size_t k, T* out) {
  switch (k) {
    case 1: return shifted_dots<T, 1>(d, x, n, out);
    case 2: return shifted_dots<T, 2>(d, x, n, out);
    case 3: return shifted_dots<T, 3>(d, x, n, out);
    case 4: return shifted_dots<T, 4>(d, x, n, out);
    case 5: return shifted_dots<T, 5>(d, x, n, out);
    case 6: return shifted_dots<T, 6>(d, x, n, out);
    case 7: return shifted_dots<T, 7>(d, x, n, out);
    case 8: return shifted_dots<T, 8>(d, x, n, out);
    case 9: return shifted_dots<T, 9>(d, x, n, out);
    default:
      for (std::size_t kk = 0; kk < k; ++kk) out[kk] += dot(d, x + kk, n);
  }
}

/// Slack every padded row must carry past its last real sample so that the
/// tiled loops may read a full tile beyond it.
template <typename T>
constexpr std::size_t kTile = 2 * Vec<T>::kWidth;

/// Multi-channel correlation over zero-padded rows:
///   y[co][t] = bias[co] + sum_ci sum_kk w[(co * cin + ci) * k + kk] * xp[ci][t + kk]
/// for t in [0, len). Row ci of xp starts at xp + ci * xp_stride and must be
/// readable for len + k - 1 + kTile elements. bias may be null.
template <typename T>
void correlate(const T* xp, std::size_t xp_stride, std::size_t cin, const T* w, const T* bias, std::size_t cout,
               std::size_t k, T* y, std::size_t y_stride, std::size_t len) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::kWidth;
  constexpr std::size_t kBlock = 4;
  // Weights regrouped as [block][ci][kk][kBlock], zero beyond cout.
  const std::size_t blocks = (cout + kBlock - 1) / kBlock;
  std::vector<T> packed(blocks * cin * k * kBlock, T(0));
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        packed[(((co / kBlock) * cin + ci) * k + kk) * kBlock + co % kBlock] = w[(co * cin + ci) * k + kk];
      }
    }
  }
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t co0 = blk * kBlock;
    const std::size_t nb = std::min(kBlock, cout - co0);
    T init[kBlock] = {};
    for (std::size_t b = 0; b < nb && bias; ++b) init[b] = bias[co0 + b];
    const T* wb = packed.data() + blk * cin * k * kBlock;
    for (std::size_t t0 = 0; t0 < len; t0 += 2 * W) {
      V acc[kBlock][2];
#pragma GCC unroll 4
      for (std::size_t b = 0; b < kBlock; ++b) {
        acc[b][0] = V{} + init[b];
        acc[b][1] = V{} + init[b];
      }
      const T* wp = wb;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xr = xp + ci * xp_stride + t0;
        for (std::size_t kk = 0; kk < k; ++kk, wp += kBlock) {
          const V x0 = load(xr + kk), x1 = load(xr + kk + W);
#pragma GCC unroll 4
          for (std::size_t b = 0; b < kBlock; ++b) {
            acc[b][0] += wp[b] * x0;
            acc[b][1] += wp[b] * x1;
          }
        }
      }
      const std::size_t n = std::min(2 * W, len - t0);
      for (std::size_t b = 0; b < nb; ++b) {
        T* yr = y + (co0 + b) * y_stride + t0;
        if (n == 2 * W) {
          store(yr, acc[b][0]);
          store(yr + W, acc[b][1]);
        } else {
          T tmp[2 * W];
          store(tmp, acc[b][0]);
          store(tmp + W, acc[b][1]);
          std::copy(tmp, tmp + n, yr);
        }
      }
    }
  }
}

}  // namespace defectkit::nn::kernels
