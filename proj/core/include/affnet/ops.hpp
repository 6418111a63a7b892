// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "affnet/tensor.hpp"

// Differentiable primitives. Every op takes an optional Tape; with a null
// tape it runs as a pure forward computation (inference / numeric
// differentiation). Spatial ops accept either [C,H,W] or batched
// [N,C,H,W]; feature ops take [N,D].
namespace affnet::ops {

/// floor((in + 2*padding - kernel)/stride) + 1; throws InvalidGeometry if
/// the result would be non-positive.
int conv_out_extent(int in, int kernel, int stride, int padding);
int pool_out_extent(int in, int kernel, int stride);

enum class Activation { Relu, LeakyRelu, Sigmoid };

struct ActivationSpec {
  Activation kind = Activation::Relu;
  double slope = 0.01;  // LeakyRelu only
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding,
                 Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int kernel, int stride, Tape<T>* tape = nullptr);

/// output = input * weight^T + bias, input [N,D_in], weight [D_out,D_in].
template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, double slope, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> apply_activation(const Tensor<T>& input, const ActivationSpec& spec, Tape<T>* tape = nullptr);

/// Per-channel spatial mean: [C,H,W] -> [C] or [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Concatenates along the channel/feature axis (axis 0 for rank 3, axis 1
/// for ranks 2 and 4). Parts must agree on all other extents.
template <typename T>
Tensor<T> channel_concat(std::span<const Tensor<T>> parts, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> channel_concat(std::initializer_list<Tensor<T>> parts, Tape<T>* tape = nullptr);

/// Channel/feature range [from, to) along the concat axis.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int from, int to, Tape<T>* tape = nullptr);

/// out[n,c,...] = input[n,c,...] * scale[n,c]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& input, const Tensor<T>& scale, Tape<T>* tape = nullptr);

/// out[n,c,...] = input[n,c,...] * scale[n,c] + shift[n,c]
template <typename T>
Tensor<T> modulate_channels(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                            Tape<T>* tape = nullptr);

/// Group Normalization without scale/shift: per (sample, group) statistics
/// over the group's channels and all spatial positions.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, int groups, double eps, Tape<T>* tape = nullptr);

/// Copy with a new shape; one extent may be -1 (inferred).
template <typename T>
Tensor<T> reshape(const Tensor<T>& input, std::vector<int> shape, Tape<T>* tape = nullptr);

/// [N, ...] -> [N, product(rest)]
template <typename T>
Tensor<T> flatten_batch(const Tensor<T>& input, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// sum_i coeffs[i] * input[i] as a scalar; coeffs are constants.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, const std::vector<T>& coeffs, Tape<T>* tape = nullptr);

/// Smooth L1 over [N,K]: per element d -> 0.5 d^2 if |d|<1 else |d|-0.5,
/// summed over K and averaged over N.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr);

/// Mirrors the width axis of [3,H,W] / [N,C,H,W] images.
template <typename T>
Tensor<T> hflip(const Tensor<T>& input, Tape<T>* tape = nullptr);

}  // namespace affnet::ops
