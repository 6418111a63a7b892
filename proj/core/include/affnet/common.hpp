// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace affnet {

/// 64-byte aligned allocator. Numeric buffers all share one alignment so
/// the vectorized kernels peel loops identically on every run, keeping
/// results bitwise reproducible.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + Align - 1) / Align * Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

/// Thrown when a caller violates an operation's contract (shape or
/// dimension mismatch, bad argument range, malformed request).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when geometry becomes degenerate: non-positive conv/pool output
/// extents, kernels larger than their input, boxes outside the frame.
class InvalidGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a computation produces NaN/Inf, or a training step diverges.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown on file I/O and parse failures; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic 64-bit generator (splitmix64). Used everywhere a seed is
/// taken so that results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Independent substream keyed by (seed, path...). Deterministic and
  /// order-insensitive with respect to other substreams, so parallel
  /// workers can derive their own generators.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = seed ^ 0x51afd54ed5d1b927ull;
    for (std::uint64_t p : path) {
      h ^= p + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      Rng mix(h);
      h = mix.next_u64();
    }
    return Rng(h);
  }

 private:
  std::uint64_t state_;
};

/// Per-op NaN/Inf assertions on forward outputs. Off by default (training
/// throughput); tests and the grad-check harness switch them on.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Worker cap: AFFNET_THREADS if set (>=1), otherwise hardware concurrency.
int configured_threads();

/// Applies the thread cap to the linear algebra backend. Call once at
/// process start in executables.
void apply_thread_limits();

}  // namespace affnet
