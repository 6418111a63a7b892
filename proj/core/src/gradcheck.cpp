// SPDX-License-Identifier: Apache-2.0
#include "affnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "affnet/common.hpp"

namespace affnet {

namespace {

class FiniteChecksGuard {
 public:
  FiniteChecksGuard() : prev_(finite_checks_enabled()) { set_finite_checks(true); }
  ~FiniteChecksGuard() { set_finite_checks(prev_); }

 private:
  bool prev_;
};

std::vector<std::int64_t> pick_elements(std::int64_t numel, const GradCheckOptions& opts, std::uint64_t tensor_idx) {
  std::vector<std::int64_t> idx;
  if (opts.max_elements_per_tensor <= 0 || numel <= opts.max_elements_per_tensor) {
    idx.resize(static_cast<std::size_t>(numel));
    for (std::int64_t i = 0; i < numel; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  Rng rng = Rng::derive(opts.sample_seed, {0x9c, tensor_idx});
  idx.reserve(static_cast<std::size_t>(opts.max_elements_per_tensor));
  for (int i = 0; i < opts.max_elements_per_tensor; ++i) {
    idx.push_back(static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(numel)));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

}  // namespace

double grad_check(const ScalarGraphFn& fn, std::vector<Tensor<double>> inputs, const GradCheckOptions& opts) {
  if (!(opts.eps >= 1e-7 && opts.eps <= 1e-3)) {
    throw ContractViolation("grad_check eps must lie in [1e-7, 1e-3]");
  }
  FiniteChecksGuard guard;

  for (Tensor<double>& t : inputs) {
    t.set_requires_grad(true);
    t.ensure_zero_grad();
  }
  Tape<double> tape;
  Tensor<double> out = fn(&tape, inputs);
  if (out.numel() != 1) throw ContractViolation("grad_check function must return a scalar");
  tape.check_finite();
  tape.backward(out);

  std::vector<AlignedVec<double>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) analytic[i] = inputs[i].grad_values();

  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    for (std::int64_t e : pick_elements(t.numel(), opts, ti)) {
      const double saved = t.data()[e];
      t.data()[e] = saved + opts.eps;
      const double f_plus = fn(nullptr, inputs).values()[0];
      t.data()[e] = saved - opts.eps;
      const double f_minus = fn(nullptr, inputs).values()[0];
      t.data()[e] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericError("non-finite value during numeric differentiation");
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double a = analytic[ti][static_cast<std::size_t>(e)];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

bool maxpool_has_tie(const Tensor<double>& input, int kernel, int stride, double tol) {
  const auto& shape = input.shape();
  if (shape.size() != 3 && shape.size() != 4) {
    throw ContractViolation("maxpool_has_tie expects [C,H,W] or [N,C,H,W]");
  }
  const bool batched = shape.size() == 4;
  const int n = batched ? shape[0] : 1;
  const int c = batched ? shape[1] : shape[0];
  const int h = batched ? shape[2] : shape[1];
  const int w = batched ? shape[3] : shape[2];
  const int oh = (h - kernel) / stride + 1;
  const int ow = (w - kernel) / stride + 1;
  const double* x = input.data();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
    const double* plane = x + nc * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        double second = best;
        for (int ki = 0; ki < kernel; ++ki) {
          for (int kj = 0; kj < kernel; ++kj) {
            const double v = plane[(oy * stride + ki) * w + ox * stride + kj];
            if (v > best) {
              second = best;
              best = v;
            } else if (v > second) {
              second = v;
            }
          }
        }
        if (kernel > 1 && best - second <= tol) return true;
      }
    }
  }
  return false;
}

}  // namespace affnet
