// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "affnet/layers.hpp"

using namespace affnet;
using D = Tensor<double>;

namespace {

// Brute-force reimplementations straight from the layer definitions,
// independent of the op library.
D naive_se(const D& x, const SEParams<double>& p) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> gap(static_cast<std::size_t>(c), 0.0);
  for (int ci = 0; ci < c; ++ci) {
    for (int i = 0; i < h * w; ++i) gap[static_cast<std::size_t>(ci)] += x.data()[ci * h * w + i];
    gap[static_cast<std::size_t>(ci)] /= h * w;
  }
  const int mid = c / p.reduction;
  std::vector<double> z1(static_cast<std::size_t>(mid), 0.0);
  for (int o = 0; o < mid; ++o) {
    double acc = p.fc1.bias.data()[o];
    for (int i = 0; i < c; ++i) acc += p.fc1.weight.data()[o * c + i] * gap[static_cast<std::size_t>(i)];
    z1[static_cast<std::size_t>(o)] = std::max(0.0, acc);
  }
  std::vector<double> wgt(static_cast<std::size_t>(c), 0.0);
  for (int o = 0; o < c; ++o) {
    double acc = p.fc2.bias.data()[o];
    for (int i = 0; i < mid; ++i) acc += p.fc2.weight.data()[o * mid + i] * z1[static_cast<std::size_t>(i)];
    wgt[static_cast<std::size_t>(o)] = 1.0 / (1.0 + std::exp(-acc));
  }
  D out(x.shape());
  for (int ci = 0; ci < c; ++ci) {
    for (int i = 0; i < h * w; ++i) out.data()[ci * h * w + i] = wgt[static_cast<std::size_t>(ci)] * x.data()[ci * h * w + i];
  }
  return out;
}

D naive_gn(const D& x, int groups, double eps) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int per = c / groups;
  D out(x.shape());
  for (int g = 0; g < groups; ++g) {
    double mean = 0;
    const int count = per * h * w;
    for (int ci = g * per; ci < (g + 1) * per; ++ci) {
      for (int i = 0; i < h * w; ++i) mean += x.data()[ci * h * w + i];
    }
    mean /= count;
    double var = 0;
    for (int ci = g * per; ci < (g + 1) * per; ++ci) {
      for (int i = 0; i < h * w; ++i) {
        const double d = x.data()[ci * h * w + i] - mean;
        var += d * d;
      }
    }
    var /= count;
    const double r = 1.0 / std::sqrt(var + eps);
    for (int ci = g * per; ci < (g + 1) * per; ++ci) {
      for (int i = 0; i < h * w; ++i) out.data()[ci * h * w + i] = (x.data()[ci * h * w + i] - mean) * r;
    }
  }
  return out;
}

D naive_adagn(const D& x, const D& ctx, const AdaGNParams<double>& p) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> raw(static_cast<std::size_t>(2 * c), 0.0);
  for (int o = 0; o < 2 * c; ++o) {
    double acc = p.fc.bias.data()[o];
    for (int i = 0; i < p.context_dim; ++i) acc += p.fc.weight.data()[o * p.context_dim + i] * ctx.data()[i];
    raw[static_cast<std::size_t>(o)] = acc > 0 ? acc : p.leaky_slope * acc;
  }
  D gn = naive_gn(x, p.gn.groups, p.gn.eps);
  D out(x.shape());
  for (int ci = 0; ci < c; ++ci) {
    const double shift = raw[static_cast<std::size_t>(ci)];
    const double scale = raw[static_cast<std::size_t>(c + ci)];
    for (int i = 0; i < h * w; ++i) out.data()[ci * h * w + i] = scale * gn.data()[ci * h * w + i] + shift;
  }
  return out;
}

}  // namespace

TEST_CASE("se_forward with all-zero fc weights halves the input") {
  Rng rng(1);
  SEParams<double> p;
  p.channels = 8;
  p.reduction = 2;
  p.fc1.weight = D::zeros({4, 8});
  p.fc1.bias = D::zeros({4});
  p.fc2.weight = D::zeros({8, 4});
  p.fc2.bias = D::zeros({8});
  D x = D::uniform({8, 3, 3}, rng);
  D out = se_forward(x, p);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(out.values()[i] == doctest::Approx(0.5 * x.values()[i]));
}

TEST_CASE("se_forward zero channel stays zero and weights stay in (0,1)") {
  Rng rng(2);
  SEParams<double> p = init_se<double>(8, rng);
  for (double& v : p.fc1.weight.values()) v = rng.uniform(-2, 2);
  for (double& v : p.fc2.weight.values()) v = rng.uniform(-2, 2);

  D x = D::uniform({8, 4, 4}, rng);
  for (int i = 0; i < 16; ++i) x.data()[3 * 16 + i] = 0.0;  // zero out channel 3
  D out = se_forward(x, p);
  for (int i = 0; i < 16; ++i) CHECK(out.at({3, i / 4, i % 4}) == 0.0);

  // With an all-ones input the output channel values are the SE weights.
  D ones = D::full({8, 4, 4}, 1.0);
  D w = se_forward(ones, p);
  for (int c = 0; c < 8; ++c) {
    CHECK(w.at({c, 0, 0}) > 0.0);
    CHECK(w.at({c, 0, 0}) < 1.0);
  }

  CHECK_THROWS_AS(se_forward(D::zeros({4, 2, 2}), p), ContractViolation);
}

TEST_CASE("group_normalize examples") {
  CHECK(group_normalize(D::full({4, 3, 3}, 7.0), GNConfig{2, 1e-5}).to_vector() == std::vector<double>(36, 0.0));

  // one group of two 1x1 channels {1,3}: mean 2, variance 1
  D x({2, 1, 1}, {1, 3});
  D out = group_normalize(x, GNConfig{1, 1e-5});
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(out.values()[0] == doctest::Approx(-s).epsilon(1e-12));
  CHECK(out.values()[1] == doctest::Approx(s).epsilon(1e-12));

  CHECK_THROWS_AS(group_normalize(D::zeros({5, 2, 2}), GNConfig{3, 1e-5}), ContractViolation);
}

TEST_CASE("group_normalize output statistics and affine invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    D x = D::uniform({8, 5, 5}, rng, -2, 2);
    const GNConfig cfg{4, 1e-5};
    D out = group_normalize(x, cfg);
    const int per = 2 * 25;
    for (int g = 0; g < 4; ++g) {
      double mean = 0, var = 0;
      for (int i = 0; i < per; ++i) mean += out.data()[g * per + i];
      mean /= per;
      for (int i = 0; i < per; ++i) {
        const double d = out.data()[g * per + i] - mean;
        var += d * d;
      }
      var /= per;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-3);
    }

    // invariance under x -> 3x + 7 up to eps effects
    D shifted(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) shifted.data()[i] = 3.0 * x.data()[i] + 7.0;
    D out2 = group_normalize(shifted, cfg);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(out2.values()[i] - out.values()[i]) < 1e-3);
  }
}

TEST_CASE("adagn_forward follows the modulation equation literally") {
  Rng rng(9);
  D x = D::uniform({8, 3, 3}, rng);
  D ctx = D::uniform({6}, rng);
  const GNConfig gn{4, 1e-5};

  SUBCASE("all-zero fc forces an all-zero output") {
    AdaGNParams<double> p;
    p.gn = gn;
    p.channels = 8;
    p.context_dim = 6;
    p.fc.weight = D::zeros({16, 6});
    p.fc.bias = D::zeros({16});
    D out = adagn_forward(x, ctx, p);
    for (const double v : out.values()) CHECK(v == 0.0);
  }

  SUBCASE("default initialization reduces to plain GN") {
    AdaGNParams<double> p = init_adagn<double>(8, 6, gn, 0.01, rng);
    D out = adagn_forward(x, ctx, p);
    D want = group_normalize(x, gn);
    CHECK(out.values() == want.values());
  }

  SUBCASE("doubling the scale-half bias doubles the normalized output") {
    AdaGNParams<double> p = init_adagn<double>(8, 6, gn, 0.01, rng);
    for (int i = 8; i < 16; ++i) p.fc.bias.data()[i] = 2.0;
    D out = adagn_forward(x, ctx, p);
    D want = group_normalize(x, gn);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(out.values()[i] == doctest::Approx(2.0 * want.values()[i]));
  }

  SUBCASE("context length mismatch is rejected") {
    AdaGNParams<double> p = init_adagn<double>(8, 6, gn, 0.01, rng);
    CHECK_THROWS_AS(adagn_forward(x, D::zeros({5}), p), ContractViolation);
  }
}

TEST_CASE("layers match brute-force reimplementations within 1e-10") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 4 * rng.uniform_int(1, 3);  // 4, 8, 12
    const int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    D x = D::uniform({c, h, w}, rng, -2, 2);

    SEParams<double> se = init_se<double>(c, rng);
    for (double& v : se.fc1.weight.values()) v = rng.uniform(-1, 1);
    for (double& v : se.fc1.bias.values()) v = rng.uniform(-1, 1);
    for (double& v : se.fc2.weight.values()) v = rng.uniform(-1, 1);
    for (double& v : se.fc2.bias.values()) v = rng.uniform(-1, 1);
    D got_se = se_forward(x, se);
    D want_se = naive_se(x, se);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(got_se.values()[i] - want_se.values()[i]) < 1e-10);

    const GNConfig gn{gn_groups_for(c), 1e-5};
    D got_gn = group_normalize(x, gn);
    D want_gn = naive_gn(x, gn.groups, gn.eps);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(got_gn.values()[i] - want_gn.values()[i]) < 1e-10);

    AdaGNParams<double> ad = init_adagn<double>(c, 6, gn, 0.01, rng);
    for (double& v : ad.fc.weight.values()) v = rng.uniform(-1, 1);
    for (double& v : ad.fc.bias.values()) v = rng.uniform(-1, 1);
    D ctx = D::uniform({6}, rng, -2, 2);
    D got_ad = adagn_forward(x, ctx, ad);
    D want_ad = naive_adagn(x, ctx, ad);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(got_ad.values()[i] - want_ad.values()[i]) < 1e-10);
  }
}

TEST_CASE("initialization is deterministic and respects the fan-in bound") {
  Rng a(42), b(42);
  AffineParams<double> p1 = init_affine<double>(10, 100, a);
  AffineParams<double> p2 = init_affine<double>(10, 100, b);
  CHECK(p1.weight.values() == p2.weight.values());
  for (const double v : p1.weight.values()) CHECK(std::abs(v) <= 0.1);
  for (const double v : p1.bias.values()) CHECK(v == 0.0);

  Rng c(7);
  AdaGNParams<double> ad = init_adagn<double>(16, 8, GNConfig{8, 1e-5}, 0.01, c);
  for (int i = 0; i < 16; ++i) CHECK(ad.fc.bias.data()[i] == 0.0);
  for (int i = 16; i < 32; ++i) CHECK(ad.fc.bias.data()[i] == 1.0);
  for (const double v : ad.fc.weight.values()) CHECK(v == 0.0);
}

TEST_CASE("SE reduction and GN group rules") {
  CHECK(se_reduction_for(24) == 4);
  CHECK(se_reduction_for(64) == 16);
  CHECK(se_reduction_for(48) == 8);
  CHECK(se_reduction_for(128) == 16);
  CHECK(se_reduction_for(256) == 16);
  CHECK(se_reduction_for(6) == 1);
  CHECK(se_reduction_for(16) == 4);

  CHECK(gn_groups_for(24) == 8);
  CHECK(gn_groups_for(12) == 6);
  CHECK(gn_groups_for(7) == 7);
  CHECK(gn_groups_for(3) == 3);
  CHECK(gn_groups_for(64) == 8);
}
