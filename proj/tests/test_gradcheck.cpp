// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "affnet/gradcheck.hpp"
#include "affnet/layers.hpp"
#include "affnet/ops.hpp"

using namespace affnet;
using D = Tensor<double>;

namespace {

// Random values bounded away from activation/loss kinks so central
// differences stay valid.
D rand_away_from(std::vector<int> shape, Rng& rng, double gap = 1e-3) {
  D t(shape);
  for (double& v : t.values()) {
    do {
      v = rng.uniform(-2.0, 2.0);
    } while (std::abs(v) < gap || std::abs(std::abs(v) - 1.0) < gap);
  }
  return t;
}

// Scalarizes through fixed random coefficients so transposed/misrouted
// gradients cannot cancel out.
std::vector<double> coeffs_for(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> c(static_cast<std::size_t>(n));
  for (double& v : c) v = rng.uniform(-1.0, 1.0);
  return c;
}

}  // namespace

TEST_CASE("grad_check is exact for a linear function") {
  Rng rng(17);
  D x = D::uniform({4, 3}, rng);
  const auto coeffs = coeffs_for(12, 900);
  const double err = grad_check(
      [&](Tape<double>* tape, std::span<D> in) { return ops::weighted_sum(in[0], coeffs, tape); }, {x});
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check enforces its eps contract") {
  D x = D::zeros({2});
  GradCheckOptions opts;
  opts.eps = 1e-2;
  CHECK_THROWS_AS(grad_check([](Tape<double>* tape, std::span<D> in) { return ops::reduce_sum(in[0], tape); }, {x}, opts),
                  ContractViolation);
}

TEST_CASE("composite conv2d+relu+affine passes under 1e-4") {
  Rng rng(23);
  D x = rand_away_from({2, 3, 8, 8}, rng);
  D w = D::uniform({4, 3, 3, 3}, rng, -0.5, 0.5);
  D b = D::uniform({4}, rng, -0.5, 0.5);
  D fw = D::uniform({5, 4 * 3 * 3}, rng, -0.5, 0.5);
  D fb = D::uniform({5}, rng, -0.5, 0.5);
  const auto coeffs = coeffs_for(2 * 5, 901);
  const double err = grad_check(
      [&](Tape<double>* tape, std::span<D> in) {
        D c = ops::conv2d(in[0], in[1], in[2], 2, 0, tape);
        D r = ops::relu(c, tape);
        D f = ops::flatten_batch(r, tape);
        D a = ops::affine(f, in[3], in[4], tape);
        return ops::weighted_sum(a, coeffs, tape);
      },
      {x, w, b, fw, fb});
  CHECK(err < 1e-4);
}

TEST_CASE("every differentiable primitive passes 20 random gradient checks") {
  Rng rng(4242);
  const GradCheckOptions opts;  // eps 1e-5

  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t cseed = 1000 + static_cast<std::uint64_t>(trial);
    {  // conv2d
      D x = D::uniform({2, 2, 6, 6}, rng);
      D w = D::uniform({3, 2, 3, 3}, rng, -0.6, 0.6);
      D b = D::uniform({3}, rng, -0.6, 0.6);
      const auto c = coeffs_for(2 * 3 * 2 * 2, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) {
                  return ops::weighted_sum(ops::conv2d(in[0], in[1], in[2], 2, 0, t), c, t);
                },
                {x, w, b}, opts) < 1e-4);
    }
    {  // maxpool2d away from ties
      D x = D::uniform({2, 6, 6}, rng);
      while (maxpool_has_tie(x, 3, 2, 1e-3)) x = D::uniform({2, 6, 6}, rng);
      const auto c = coeffs_for(2 * 2 * 2, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::maxpool2d(in[0], 3, 2, t), c, t); },
                {x}, opts) < 1e-4);
    }
    {  // affine
      D x = D::uniform({3, 4}, rng);
      D w = D::uniform({5, 4}, rng);
      D b = D::uniform({5}, rng);
      const auto c = coeffs_for(15, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::affine(in[0], in[1], in[2], t), c, t); },
                {x, w, b}, opts) < 1e-4);
    }
    {  // activations
      D x = rand_away_from({3, 5}, rng);
      const auto c = coeffs_for(15, cseed);
      CHECK(grad_check([&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::relu(in[0], t), c, t); },
                       {x}, opts) < 1e-4);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::leaky_relu(in[0], 0.01, t), c, t); },
                {x}, opts) < 1e-4);
      CHECK(grad_check([&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::sigmoid(in[0], t), c, t); },
                       {x}, opts) < 1e-4);
    }
    {  // global_avg_pool
      D x = D::uniform({2, 3, 4, 4}, rng);
      const auto c = coeffs_for(6, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::global_avg_pool(in[0], t), c, t); },
                {x}, opts) < 1e-4);
    }
    {  // channel_concat + slice
      D a = D::uniform({2, 3, 3}, rng);
      D b = D::uniform({4, 3, 3}, rng);
      const auto c = coeffs_for(3 * 3 * 3, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) {
                  D cat = ops::channel_concat({in[0], in[1]}, t);
                  return ops::weighted_sum(ops::slice_channels(cat, 1, 4, t), c, t);
                },
                {a, b}, opts) < 1e-4);
    }
    {  // scale/modulate channels
      D x = D::uniform({2, 3, 2, 2}, rng);
      D s = D::uniform({2, 3}, rng);
      D sh = D::uniform({2, 3}, rng);
      const auto c = coeffs_for(24, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) {
                  return ops::weighted_sum(ops::modulate_channels(in[0], in[1], in[2], t), c, t);
                },
                {x, s, sh}, opts) < 1e-4);
    }
    {  // group_norm
      D x = D::uniform({2, 6, 3, 3}, rng);
      const auto c = coeffs_for(2 * 6 * 9, cseed);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::group_norm(in[0], 3, 1e-5, t), c, t); },
                {x}, opts) < 1e-4);
    }
    {  // smooth_l1 away from the |d|=1 kink
      D p(std::vector<int>{3, 2});
      D q(std::vector<int>{3, 2});
      for (int i = 0; i < 6; ++i) {
        p.data()[i] = rng.uniform(-2, 2);
        double d;
        do {
          d = rng.uniform(-2, 2);
        } while (std::abs(std::abs(d) - 1.0) < 1e-3 || std::abs(d) < 1e-3);
        q.data()[i] = p.data()[i] - d;
      }
      CHECK(grad_check([&](Tape<double>* t, std::span<D> in) { return ops::smooth_l1(in[0], in[1], t); }, {p, q},
                       opts) < 1e-4);
    }
    {  // hflip
      D x = D::uniform({2, 3, 4}, rng);
      const auto c = coeffs_for(24, cseed);
      CHECK(grad_check([&](Tape<double>* t, std::span<D> in) { return ops::weighted_sum(ops::hflip(in[0], t), c, t); },
                       {x}, opts) < 1e-4);
    }
  }
}

TEST_CASE("layer primitives pass gradient checks") {
  Rng rng(777);
  const GradCheckOptions opts;
  for (int trial = 0; trial < 5; ++trial) {
    const auto c = coeffs_for(2 * 8 * 2 * 2, 50 + static_cast<std::uint64_t>(trial));
    {  // se_forward w.r.t. input and both affines
      SEParams<double> se = init_se<double>(8, rng);
      D x = D::uniform({2, 8, 2, 2}, rng);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) {
                  SEParams<double> p = se;
                  p.fc1.weight = in[1];
                  p.fc1.bias = in[2];
                  p.fc2.weight = in[3];
                  p.fc2.bias = in[4];
                  return ops::weighted_sum(se_forward(in[0], p, t), c, t);
                },
                {x, se.fc1.weight, se.fc1.bias, se.fc2.weight, se.fc2.bias}, opts) < 1e-4);
    }
    {  // group_normalize
      D x = D::uniform({2, 8, 2, 2}, rng);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) {
                  return ops::weighted_sum(group_normalize(in[0], GNConfig{4, 1e-5}, t), c, t);
                },
                {x}, opts) < 1e-4);
    }
    {  // adagn_forward w.r.t. input, context, fc params
      Rng prng(900 + static_cast<std::uint64_t>(trial));
      AdaGNParams<double> ad = init_adagn<double>(8, 6, GNConfig{4, 1e-5}, 0.01, prng);
      // Perturb the fc so the LeakyReLU sees both signs, away from 0.
      ad.fc.weight = rand_away_from({16, 6}, prng);
      ad.fc.bias = rand_away_from({16}, prng);
      D x = D::uniform({2, 8, 2, 2}, prng);
      D ctx = D::uniform({2, 6}, prng);
      CHECK(grad_check(
                [&](Tape<double>* t, std::span<D> in) {
                  AdaGNParams<double> p = ad;
                  p.fc.weight = in[2];
                  p.fc.bias = in[3];
                  return ops::weighted_sum(adagn_forward(in[0], in[1], p, t), c, t);
                },
                {x, ctx, ad.fc.weight, ad.fc.bias}, opts) < 1e-4);
    }
  }
}

TEST_CASE("maxpool tie points are flagged for exclusion") {
  D constant = D::full({1, 4, 4}, 2.0);
  CHECK(maxpool_has_tie(constant, 3, 1));
  D distinct({1, 2, 2}, {1, 2, 3, 4});
  CHECK_FALSE(maxpool_has_tie(distinct, 2, 1));
}

TEST_CASE("non-finite intermediates are reported with the op identity") {
  D x({2}, {1.0, 1e308});
  x.set_requires_grad(true);
  Tape<double> tape;
  const D overflowed = ops::weighted_sum(x, {1e308, 1e308}, &tape);  // overflows to inf
  CHECK(!std::isfinite(overflowed.values()[0]));
  CHECK_THROWS_WITH_AS(tape.check_finite(), doctest::Contains("weighted_sum"), NumericError);
}
