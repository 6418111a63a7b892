// SPDX-License-Identifier: Apache-2.0
#include "affnet/layers.hpp"

#include <cmath>

namespace affnet {

int gn_groups_for(int channels) {
  if (channels < 1) throw ContractViolation("gn_groups_for needs positive channels");
  for (int g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

int se_reduction_for(int channels) {
  if (channels < 1) throw ContractViolation("se_reduction_for needs positive channels");
  for (int r = 16; r > 1; r /= 2) {
    if (channels % r == 0 && channels / r >= 4) return r;
  }
  return 1;
}

namespace {

// Lifts [C,H,W] + [D] layer calls to the batched forms and back.
template <typename T>
bool lift_unbatched(Tensor<T>& x, Tape<T>* tape) {
  if (x.rank() == 4) return false;
  if (x.rank() != 3) throw ContractViolation("layer input must be [C,H,W] or [N,C,H,W]");
  x = ops::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}, tape);
  return true;
}

}  // namespace

template <typename T>
Tensor<T> se_forward(const Tensor<T>& input, const SEParams<T>& params, Tape<T>* tape) {
  Tensor<T> x = input;
  const bool lifted = lift_unbatched(x, tape);
  if (x.dim(1) != params.channels) {
    throw ContractViolation("se_forward channel mismatch: input " + std::to_string(x.dim(1)) + " vs params " +
                            std::to_string(params.channels));
  }
  Tensor<T> pooled = ops::global_avg_pool(x, tape);                    // [N,C]
  Tensor<T> mid = ops::relu(ops::affine(pooled, params.fc1.weight, params.fc1.bias, tape), tape);
  Tensor<T> w = ops::sigmoid(ops::affine(mid, params.fc2.weight, params.fc2.bias, tape), tape);
  Tensor<T> out = ops::scale_channels(x, w, tape);
  if (lifted) out = ops::reshape(out, {out.dim(1), out.dim(2), out.dim(3)}, tape);
  return out;
}

template <typename T>
Tensor<T> group_normalize(const Tensor<T>& input, const GNConfig& cfg, Tape<T>* tape) {
  return ops::group_norm(input, cfg.groups, cfg.eps, tape);
}

template <typename T>
Tensor<T> adagn_forward(const Tensor<T>& input, const Tensor<T>& context, const AdaGNParams<T>& params,
                        Tape<T>* tape) {
  Tensor<T> x = input;
  Tensor<T> ctx = context;
  const bool lifted = lift_unbatched(x, tape);
  if (lifted) {
    if (ctx.rank() != 1) throw ContractViolation("adagn_forward context must be [D] for unbatched input");
    ctx = ops::reshape(ctx, {1, ctx.dim(0)}, tape);
  }
  if (ctx.rank() != 2 || ctx.dim(0) != x.dim(0)) {
    throw ContractViolation("adagn_forward context batch mismatch");
  }
  if (ctx.dim(1) != params.context_dim) {
    throw ContractViolation("adagn_forward context length " + std::to_string(ctx.dim(1)) + " does not match D " +
                            std::to_string(params.context_dim));
  }
  const int c = x.dim(1);
  if (c != params.channels) {
    throw ContractViolation("adagn_forward channel mismatch: input " + std::to_string(c) + " vs params " +
                            std::to_string(params.channels));
  }
  Tensor<T> raw = ops::affine(ctx, params.fc.weight, params.fc.bias, tape);  // [N, 2C]
  Tensor<T> act = ops::leaky_relu(raw, params.leaky_slope, tape);
  Tensor<T> shift = ops::slice_channels(act, 0, c, tape);
  Tensor<T> scale = ops::slice_channels(act, c, 2 * c, tape);
  Tensor<T> normed = ops::group_norm(x, params.gn.groups, params.gn.eps, tape);
  Tensor<T> out = ops::modulate_channels(normed, scale, shift, tape);
  if (lifted) out = ops::reshape(out, {out.dim(1), out.dim(2), out.dim(3)}, tape);
  return out;
}

template <typename T>
AffineParams<T> init_affine(int d_out, int d_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  AffineParams<T> p;
  p.weight = Tensor<T>::uniform({d_out, d_in}, rng, -bound, bound);
  p.bias = Tensor<T>::zeros({d_out});
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  return p;
}

template <typename T>
Tensor<T> init_conv_weight(int c_out, int c_in, int kernel, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in) * kernel * kernel);
  Tensor<T> w = Tensor<T>::uniform({c_out, c_in, kernel, kernel}, rng, -bound, bound);
  w.set_requires_grad(true);
  return w;
}

template <typename T>
SEParams<T> init_se(int channels, Rng& rng) {
  SEParams<T> p;
  p.channels = channels;
  p.reduction = se_reduction_for(channels);
  const int mid = channels / p.reduction;
  p.fc1 = init_affine<T>(mid, channels, rng);
  p.fc2 = init_affine<T>(channels, mid, rng);
  return p;
}

template <typename T>
AdaGNParams<T> init_adagn(int channels, int context_dim, const GNConfig& gn, double leaky_slope, Rng& rng) {
  AdaGNParams<T> p;
  p.gn = gn;
  p.channels = channels;
  p.context_dim = context_dim;
  p.leaky_slope = leaky_slope;
  // Zero weights with a unit scale half: the layer starts out as plain GN
  // instead of zeroing its input.
  p.fc.weight = Tensor<T>::zeros({2 * channels, context_dim});
  p.fc.bias = Tensor<T>::zeros({2 * channels});
  for (int i = channels; i < 2 * channels; ++i) p.fc.bias.data()[i] = T(1);
  p.fc.weight.set_requires_grad(true);
  p.fc.bias.set_requires_grad(true);
  return p;
}

#define AFFNET_INSTANTIATE_LAYERS(T)                                                                      \
  template Tensor<T> se_forward<T>(const Tensor<T>&, const SEParams<T>&, Tape<T>*);                       \
  template Tensor<T> group_normalize<T>(const Tensor<T>&, const GNConfig&, Tape<T>*);                     \
  template Tensor<T> adagn_forward<T>(const Tensor<T>&, const Tensor<T>&, const AdaGNParams<T>&, Tape<T>*); \
  template AffineParams<T> init_affine<T>(int, int, Rng&);                                                \
  template Tensor<T> init_conv_weight<T>(int, int, int, Rng&);                                            \
  template SEParams<T> init_se<T>(int, Rng&);                                                             \
  template AdaGNParams<T> init_adagn<T>(int, int, const GNConfig&, double, Rng&);

AFFNET_INSTANTIATE_LAYERS(float)
AFFNET_INSTANTIATE_LAYERS(double)

#undef AFFNET_INSTANTIATE_LAYERS

}  // namespace affnet
