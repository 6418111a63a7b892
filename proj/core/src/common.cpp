// SPDX-License-Identifier: Apache-2.0
#include "affnet/common.hpp"

#include <Eigen/Core>

#include <atomic>
#include <cstdlib>
#include <thread>

namespace affnet {

namespace {
std::atomic<bool> g_finite_checks{false};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

int configured_threads() {
  if (const char* env = std::getenv("AFFNET_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void apply_thread_limits() { Eigen::setNbThreads(configured_threads()); }

}  // namespace affnet
