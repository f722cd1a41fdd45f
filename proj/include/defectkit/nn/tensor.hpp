// SPDX-License-Identifier: Apache-2.0
//
// Dense activation tensor. Logical shape is (batch, time, channels); storage
// is channel-major per batch item so that time runs contiguously.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "defectkit/error.hpp"
#include "defectkit/nn/kernels.hpp"

namespace defectkit::nn {

/// Process-wide cache of large activation buffers. Freshly mapped memory
/// page-faults on first touch, which costs more than the arithmetic in the
/// thin early layers.
namespace buffer_pool {
void* take(std::size_t bytes);
void give(void* p, std::size_t bytes) noexcept;
/// Releases every cached buffer.
void trim() noexcept;
}  // namespace buffer_pool

template <typename T>
struct PooledAllocator {
  using value_type = T;
  PooledAllocator() = default;
  template <typename U>
  PooledAllocator(const PooledAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(buffer_pool::take(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { buffer_pool::give(p, n * sizeof(T)); }
  template <typename U>
  bool operator==(const PooledAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
struct Tensor {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<T, PooledAllocator<T>> data;

  Tensor() = default;
  Tensor(std::size_t b, std::size_t c, std::size_t l, T fill = T(0))
      : batch(b), channels(c), length(l), data(b * c * l, fill) {}

  std::array<std::size_t, 3> shape() const { return {batch, length, channels}; }
  std::size_t size() const { return data.size(); }

  T* row(std::size_t b, std::size_t c) { return data.data() + (b * channels + c) * length; }
  const T* row(std::size_t b, std::size_t c) const { return data.data() + (b * channels + c) * length; }

  T& at(std::size_t b, std::size_t t, std::size_t c) { return row(b, c)[t]; }
  T at(std::size_t b, std::size_t t, std::size_t c) const { return row(b, c)[t]; }

  bool same_shape(const Tensor& o) const {
    return batch == o.batch && channels == o.channels && length == o.length;
  }
};

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& where) {
  for (T v : t.data) {
    if (!std::isfinite(v)) throw DataError("nn", "non-finite activation after " + where);
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  return kernels::dot(a, b, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace defectkit::nn
