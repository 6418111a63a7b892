// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "affnet/ops.hpp"
#include "affnet/tensor.hpp"

namespace affnet {

/// Group count used throughout: largest divisor of `channels` <= 8.
int gn_groups_for(int channels);

/// SE bottleneck reduction: largest power of two <= 16 dividing `channels`
/// with channels/r >= 4; falls back to 1 for very narrow layers.
int se_reduction_for(int channels);

template <typename T>
struct AffineParams {
  Tensor<T> weight;  // [D_out, D_in]
  Tensor<T> bias;    // [D_out]
};

/// Squeeze-and-Excitation: per-channel weights from globally pooled
/// features through a two-affine bottleneck with ReLU inside and a sigmoid
/// gate, applied multiplicatively to the input channels.
template <typename T>
struct SEParams {
  int channels = 0;
  int reduction = 1;
  AffineParams<T> fc1;  // C -> C/r
  AffineParams<T> fc2;  // C/r -> C
};

struct GNConfig {
  int groups = 8;
  double eps = 1e-5;
};

/// Adaptive Group Normalization: plain GN whose per-channel scale and
/// shift come from a context vector through one affine layer and a
/// LeakyReLU, output layout [shift (C), scale (C)].
template <typename T>
struct AdaGNParams {
  GNConfig gn;
  int channels = 0;
  int context_dim = 0;
  AffineParams<T> fc;  // D -> 2C
  double leaky_slope = 0.01;
};

template <typename T>
Tensor<T> se_forward(const Tensor<T>& input, const SEParams<T>& params, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> group_normalize(const Tensor<T>& input, const GNConfig& cfg, Tape<T>* tape = nullptr);

/// context is [D] for [C,H,W] inputs or [N,D] for [N,C,H,W].
template <typename T>
Tensor<T> adagn_forward(const Tensor<T>& input, const Tensor<T>& context, const AdaGNParams<T>& params,
                        Tape<T>* tape = nullptr);

// Parameter initialization: weights uniform in +-1/sqrt(fan_in), biases
// zero. AdaGN's fc bias starts with the scale half at 1 so the layer
// begins as plain GN.
template <typename T>
AffineParams<T> init_affine(int d_out, int d_in, Rng& rng);
template <typename T>
Tensor<T> init_conv_weight(int c_out, int c_in, int kernel, Rng& rng);
template <typename T>
SEParams<T> init_se(int channels, Rng& rng);
template <typename T>
AdaGNParams<T> init_adagn(int channels, int context_dim, const GNConfig& gn, double leaky_slope, Rng& rng);

}  // namespace affnet
