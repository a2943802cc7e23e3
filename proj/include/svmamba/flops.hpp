#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace svmamba {

// Operation-count table used by every counted kernel:
//   add, subtract, multiply, divide, sqrt, exp, compare-free negate: 1 each
//     (negation is free)
//   fused multiply-add in a dot product or axpy: 2
//   squared distance over d channels: d subtracts + d squares + (d-1) adds = 3d - 1
//   sparse mat-vec: 2 per stored entry
//   dot product of length n: 2n; axpy of length n: 2n; scaling: n; norm: 2n + 1
// Sorting, comparisons and index bookkeeping are not counted.

enum class Stage : std::size_t {
  Adjacency = 0,   // pairwise distances, sigma, kNN selection, edge weights
  Laplacian = 1,   // degrees and normalization
  Eigensolver = 2, // Lanczos iterations, tridiagonal solves, Ritz vectors
  Scan = 3,        // selective scans and merges (informational)
};

inline constexpr std::size_t kStageCount = 4;

inline constexpr std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Adjacency: return "adjacency";
    case Stage::Laplacian: return "laplacian";
    case Stage::Eigensolver: return "eigensolver";
    case Stage::Scan: return "scan";
  }
  return "unknown";
}

/// Per-thread operation counters. Counting is always on and costs one add per
/// kernel call, not per flop.
class FlopCounter {
 public:
  void add(Stage s, std::uint64_t ops) noexcept {
    if (enabled_) counts_[static_cast<std::size_t>(s)] += ops;
  }
  std::uint64_t get(Stage s) const noexcept { return counts_[static_cast<std::size_t>(s)]; }
  std::uint64_t total() const noexcept {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  void reset() noexcept { counts_.fill(0); }
  void set_enabled(bool on) noexcept { enabled_ = on; }
  bool enabled() const noexcept { return enabled_; }

 private:
  std::array<std::uint64_t, kStageCount> counts_{};
  bool enabled_ = true;
};

inline FlopCounter& flop_counter() {
  thread_local FlopCounter counter;
  return counter;
}

inline void count_ops(Stage s, std::uint64_t ops) noexcept { flop_counter().add(s, ops); }

/// Accumulated operation count for one pipeline stage on this thread.
inline std::uint64_t count_flops(Stage s) noexcept { return flop_counter().get(s); }

inline void reset_flops() noexcept { flop_counter().reset(); }

}  // namespace svmamba
