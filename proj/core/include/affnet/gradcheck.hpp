// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "affnet/tensor.hpp"

namespace affnet {

/// Builds a scalar-valued graph from `inputs`. With a null tape the
/// function must run as a pure forward computation.
using ScalarGraphFn = std::function<Tensor<double>(Tape<double>*, std::span<Tensor<double>>)>;

struct GradCheckOptions {
  double eps = 1e-5;  // central-difference step, must lie in [1e-7, 1e-3]
  /// 0 checks every element; otherwise at most this many per input tensor,
  /// chosen deterministically from sample_seed.
  int max_elements_per_tensor = 0;
  std::uint64_t sample_seed = 0x5eed;
};

/// Compares reverse-mode gradients against central differences and returns
/// max over checked elements of |analytic - numeric| / max(1, |analytic|,
/// |numeric|). Runs in 64-bit only. Non-finite intermediates are reported
/// as NumericError carrying the op name.
double grad_check(const ScalarGraphFn& fn, std::vector<Tensor<double>> inputs, const GradCheckOptions& opts = {});

/// True when some pooling window's two largest values are within `tol`;
/// the max-pool derivative is undefined there, so grad checks exclude
/// such inputs.
bool maxpool_has_tie(const Tensor<double>& input, int kernel, int stride, double tol = 1e-6);

}  // namespace affnet
