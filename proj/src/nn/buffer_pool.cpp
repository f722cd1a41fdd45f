// SPDX-License-Identifier: Apache-2.0

#include <mutex>
#include <new>
#include <unordered_map>
#include <vector>

#include "defectkit/nn/tensor.hpp"

namespace defectkit::nn::buffer_pool {
namespace {

constexpr std::size_t kMinPooled = std::size_t{1} << 16;
constexpr std::size_t kMaxCached = std::size_t{1} << 31;
constexpr std::align_val_t kAlign{64};

struct State {
  std::mutex mu;
  std::unordered_map<std::size_t, std::vector<void*>> free;
  std::size_t cached = 0;
};

State& state() {
  static State* s = new State;  // outlives static tensors destroyed at exit
  return *s;
}

}  // namespace

void* take(std::size_t bytes) {
  if (bytes >= kMinPooled) {
    State& s = state();
    std::lock_guard lock(s.mu);
    auto it = s.free.find(bytes);
    if (it != s.free.end() && !it->second.empty()) {
      void* p = it->second.back();
      it->second.pop_back();
      s.cached -= bytes;
      return p;
    }
  }
  return ::operator new(bytes, kAlign);
}

void give(void* p, std::size_t bytes) noexcept {
  if (p == nullptr) return;
  if (bytes >= kMinPooled) {
    State& s = state();
    std::lock_guard lock(s.mu);
    if (s.cached + bytes <= kMaxCached) {
      try {
        s.free[bytes].push_back(p);
        s.cached += bytes;
        return;
      } catch (...) {
      }
    }
  }
  ::operator delete(p, kAlign);
}

void trim() noexcept {
  State& s = state();
  std::lock_guard lock(s.mu);
  for (auto& [bytes, list] : s.free) {
    for (void* p : list) ::operator delete(p, kAlign);
  }
  s.free.clear();
  s.cached = 0;
}

}  // namespace defectkit::nn::buffer_pool
