// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "affnet/layers.hpp"
#include "affnet/ops.hpp"
#include "affnet/tensor.hpp"

namespace affnet {

/// Conv layer description as (out channels, kernel size, stride, padding).
struct ConvSpec {
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  bool operator==(const ConvSpec&) const = default;
};

enum class Variant { Full, NoST, NoSE, NoAdaGN };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);  // throws ContractViolation on unknown names

/// Architecture description. Defaults are the full-scale network; tiny()
/// is a reduced clone for end-to-end gradient checks and scaled(k)
/// divides the widths for desk-scale training runs.
struct ModelConfig {
  std::array<ConvSpec, 6> face_convs{{{48, 5, 2, 0}, {96, 5, 1, 0}, {128, 5, 1, 2}, {192, 3, 1, 1}, {128, 3, 2, 0}, {64, 3, 2, 0}}};
  std::array<ConvSpec, 5> eye_convs{{{24, 5, 2, 0}, {48, 5, 1, 0}, {64, 5, 1, 1}, {128, 3, 1, 1}, {64, 3, 1, 1}}};
  ConvSpec fusion_conv{64, 3, 2, 1};
  std::array<int, 4> rects_fc_widths{64, 96, 128, 64};
  std::array<int, 2> face_fc_widths{128, 64};
  int eye_fc_width = 128;
  std::array<int, 2> head_widths{128, 2};
  int face_size = 224;
  int eye_size = 112;
  double leaky_slope = 0.01;
  double gn_eps = 1e-5;
  Variant variant = Variant::Full;

  int context_dim() const { return rects_fc_widths.back() + face_fc_widths.back(); }

  /// Width-reduced clone on 32x32 faces / 16x16 eyes (channels divided by
  /// 8, kernels shrunk so every extent stays positive). Small enough for
  /// finite-difference checks of the whole network.
  static ModelConfig tiny();

  /// Divides all channel and FC widths by `divisor` (>=1), keeping the
  /// 12-d Rects input and 2-d output.
  ModelConfig scaled(int divisor) const;

  bool operator==(const ModelConfig&) const = default;
};

/// Returns `config` switched to the given ablation variant.
ModelConfig make_variant(ModelConfig config, Variant variant);

struct ShapeTraceEntry {
  std::string name;
  std::vector<int> shape;
  bool operator==(const ShapeTraceEntry&) const = default;
};

/// Per-sample output shape of every layer, from the conv/pool arithmetic
/// alone. Throws InvalidGeometry when a chain collapses to zero extent.
std::vector<ShapeTraceEntry> shape_trace(const ModelConfig& config);

/// One conv layer plus its attached normalization / attention, in
/// execution order conv -> norm -> SE -> activation (-> pool).
template <typename T>
struct ConvBlock {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;
  std::optional<AdaGNParams<T>> adagn;
  std::optional<GNConfig> gn;
  std::optional<SEParams<T>> se;
  bool pool_after = false;
};

/// All learnable state. Tensors are shared handles; the eye stream is
/// stored once and used for both eyes (weight sharing). `named` lists
/// every parameter tensor under a stable path, in build order.
template <typename T>
struct ModelParams {
  ModelConfig config;

  std::array<AffineParams<T>, 4> rects_fc;
  std::vector<ConvBlock<T>> face;  // 6 blocks
  AffineParams<T> face_fc1, face_fc2;
  std::vector<ConvBlock<T>> eye;  // 5 blocks, shared between the two eyes
  std::optional<SEParams<T>> stack_se;
  ConvBlock<T> fusion;
  AffineParams<T> eye_fc;
  AffineParams<T> head_fc1, head_fc2;

  std::vector<std::pair<std::string, Tensor<T>>> named;

  std::int64_t parameter_count() const;
  void zero_grad();
  const Tensor<T>& tensor(const std::string& name) const;  // throws if absent
};

template <typename T>
ModelParams<T> build(const ModelConfig& config, std::uint64_t seed);

template <typename T>
struct BatchInput {
  Tensor<T> face;               // [N,3,224,224]
  Tensor<T> eye_left;           // [N,3,112,112]
  Tensor<T> eye_right_flipped;  // [N,3,112,112]
  Tensor<T> rects;              // [N,12]
};

template <typename T>
Tensor<T> rects_stream(const ModelParams<T>& params, const Tensor<T>& rects, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> face_stream(const ModelParams<T>& params, const Tensor<T>& face, Tape<T>* tape = nullptr);

/// Runs the shared-weight eye net. Returns the stacking taps: the
/// post-pool third-conv map and the fifth-conv map, both [N,C5,S,S].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> eye_stream(const ModelParams<T>& params, const Tensor<T>& eye,
                                           const Tensor<T>& context, Tape<T>* tape = nullptr);

/// Channel-stacks (left3, left5, right3, right5), applies the post-stack
/// SE and fusion conv, and compresses to the final eye feature.
template <typename T>
Tensor<T> fuse_eyes(const ModelParams<T>& params, const Tensor<T>& l3, const Tensor<T>& l5, const Tensor<T>& r3,
                    const Tensor<T>& r5, const Tensor<T>& context, Tape<T>* tape = nullptr);

/// Full forward pass: rects -> face -> context -> eyes -> fusion -> head.
/// Output is the [N,2] gaze point in cm relative to the camera.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const BatchInput<T>& batch, Tape<T>* tape = nullptr);

}  // namespace affnet
