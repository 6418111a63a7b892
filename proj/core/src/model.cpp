// SPDX-License-Identifier: Apache-2.0
#include "affnet/model.hpp"

#include <algorithm>

namespace affnet {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full:
      return "Full";
    case Variant::NoST:
      return "NoST";
    case Variant::NoSE:
      return "NoSE";
    case Variant::NoAdaGN:
      return "NoAdaGN";
  }
  throw ContractViolation("unknown variant value");
}

Variant variant_from_string(const std::string& s) {
  if (s == "Full") return Variant::Full;
  if (s == "NoST") return Variant::NoST;
  if (s == "NoSE") return Variant::NoSE;
  if (s == "NoAdaGN") return Variant::NoAdaGN;
  throw ContractViolation("unknown variant name '" + s + "'");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.face_convs = {{{6, 3, 1, 0}, {12, 3, 1, 0}, {16, 3, 1, 1}, {24, 3, 1, 1}, {16, 3, 2, 1}, {8, 3, 2, 1}}};
  c.eye_convs = {{{3, 3, 1, 0}, {6, 3, 1, 0}, {8, 3, 1, 1}, {16, 3, 1, 1}, {8, 3, 1, 1}}};
  // stride 1 keeps the fused map at 2x2: group-normalizing 1x1 maps with
  // one channel per group would zero them out
  c.fusion_conv = {8, 3, 1, 1};
  c.rects_fc_widths = {8, 12, 16, 8};
  c.face_fc_widths = {16, 8};
  c.eye_fc_width = 16;
  c.head_widths = {16, 2};
  c.face_size = 32;
  c.eye_size = 16;
  return c;
}

ModelConfig ModelConfig::scaled(int divisor) const {
  if (divisor < 1) throw ContractViolation("scale divisor must be >= 1");
  auto div = [divisor](int v) { return std::max(1, v / divisor); };
  ModelConfig c = *this;
  for (ConvSpec& s : c.face_convs) s.out_channels = div(s.out_channels);
  for (ConvSpec& s : c.eye_convs) s.out_channels = div(s.out_channels);
  c.fusion_conv.out_channels = div(c.fusion_conv.out_channels);
  for (int& w : c.rects_fc_widths) w = div(w);
  c.face_fc_widths = {div(face_fc_widths[0]), div(face_fc_widths[1])};
  c.eye_fc_width = div(eye_fc_width);
  c.head_widths = {div(head_widths[0]), head_widths[1]};
  return c;
}

ModelConfig make_variant(ModelConfig config, Variant variant) {
  config.variant = variant;
  return config;
}

namespace {

// Pools sit after the activations of these conv layers (0-based).
constexpr int kPoolKernel = 3;
constexpr int kPoolStride = 2;
bool pool_after_conv(std::size_t idx) { return idx == 1 || idx == 2; }

bool face_se_at(const ModelConfig& c, std::size_t idx) {
  return c.variant != Variant::NoSE && idx + 3 >= c.face_convs.size();  // last three
}

bool eye_se_at(const ModelConfig& c, std::size_t idx) {
  return c.variant != Variant::NoSE && (idx == 1 || idx == 3 || idx == 4);
}

struct ChainResult {
  int extent;  // final spatial extent
  int channels;
};

ChainResult trace_conv_chain(const ModelConfig& cfg, std::span<const ConvSpec> convs, int in_size, int in_ch,
                             const std::string& prefix, std::vector<ShapeTraceEntry>* out) {
  int s = in_size;
  int ch = in_ch;
  if (out) out->push_back({prefix + ".input", {ch, s, s}});
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const ConvSpec& cs = convs[i];
    s = ops::conv_out_extent(s, cs.kernel, cs.stride, cs.padding);
    ch = cs.out_channels;
    if (out) out->push_back({prefix + ".conv" + std::to_string(i + 1), {ch, s, s}});
    if (pool_after_conv(i)) {
      s = ops::pool_out_extent(s, kPoolKernel, kPoolStride);
      if (out) out->push_back({prefix + ".pool" + std::to_string(i + 1), {ch, s, s}});
    }
  }
  (void)cfg;
  return {s, ch};
}

}  // namespace

std::vector<ShapeTraceEntry> shape_trace(const ModelConfig& config) {
  std::vector<ShapeTraceEntry> trace;

  for (std::size_t i = 0; i < config.rects_fc_widths.size(); ++i) {
    trace.push_back({"rects.fc" + std::to_string(i + 1), {config.rects_fc_widths[i]}});
  }

  const ChainResult face = trace_conv_chain(config, config.face_convs, config.face_size, 3, "face", &trace);
  trace.push_back({"face.flatten", {face.channels * face.extent * face.extent}});
  trace.push_back({"face.fc1", {config.face_fc_widths[0]}});
  trace.push_back({"face.fc2", {config.face_fc_widths[1]}});

  const ChainResult eye = trace_conv_chain(config, config.eye_convs, config.eye_size, 3, "eye", &trace);

  // The stacking taps: post-pool conv3 map and conv5 map must agree in
  // spatial extent for channel stacking to be well formed.
  int tap3 = config.eye_size;
  for (std::size_t i = 0; i < 3; ++i) {
    tap3 = ops::conv_out_extent(tap3, config.eye_convs[i].kernel, config.eye_convs[i].stride,
                                config.eye_convs[i].padding);
    if (pool_after_conv(i)) tap3 = ops::pool_out_extent(tap3, kPoolKernel, kPoolStride);
  }
  if (tap3 != eye.extent) {
    throw InvalidGeometry("eye stream taps disagree: post-pool conv3 extent " + std::to_string(tap3) +
                          " vs conv5 extent " + std::to_string(eye.extent));
  }

  const ConvSpec& fu = config.fusion_conv;
  const int fused_extent = ops::conv_out_extent(eye.extent, fu.kernel, fu.stride, fu.padding);
  if (config.variant == Variant::NoST) {
    trace.push_back({"eye_end.conv", {fu.out_channels, fused_extent, fused_extent}});
    trace.push_back({"eye_end.flatten", {fu.out_channels * fused_extent * fused_extent}});
    trace.push_back({"fuse.concat", {2 * fu.out_channels * fused_extent * fused_extent}});
  } else {
    const int stack_ch = 2 * (config.eye_convs[2].out_channels + config.eye_convs[4].out_channels);
    trace.push_back({"fuse.stack", {stack_ch, eye.extent, eye.extent}});
    trace.push_back({"fuse.conv", {fu.out_channels, fused_extent, fused_extent}});
    trace.push_back({"fuse.flatten", {fu.out_channels * fused_extent * fused_extent}});
  }
  trace.push_back({"fuse.fc", {config.eye_fc_width}});

  trace.push_back({"head.fc1", {config.head_widths[0]}});
  trace.push_back({"head.fc2", {config.head_widths[1]}});
  return trace;
}

template <typename T>
std::int64_t ModelParams<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named) n += t.numel();
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [name, t] : named) t.ensure_zero_grad();
}

template <typename T>
const Tensor<T>& ModelParams<T>::tensor(const std::string& name) const {
  for (const auto& [n, t] : named) {
    if (n == name) return t;
  }
  throw ContractViolation("no parameter named '" + name + "'");
}

namespace {

template <typename T>
class Builder {
 public:
  Builder(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(Rng::derive(seed, {0xaff})) {}

  ModelParams<T> run() {
    shape_trace(cfg_);  // validates the spatial chains up front

    ModelParams<T> p;
    p.config = cfg_;

    int w = 12;
    for (std::size_t i = 0; i < cfg_.rects_fc_widths.size(); ++i) {
      p.rects_fc[i] = affine_p("rects.fc" + std::to_string(i + 1), cfg_.rects_fc_widths[i], w);
      w = cfg_.rects_fc_widths[i];
    }

    const int ctx = cfg_.context_dim();
    int ch = 3;
    for (std::size_t i = 0; i < cfg_.face_convs.size(); ++i) {
      p.face.push_back(conv_block("face.conv" + std::to_string(i + 1), cfg_.face_convs[i], ch,
                                  /*adagn_ctx=*/0, face_se_at(cfg_, i), pool_after_conv(i)));
      ch = cfg_.face_convs[i].out_channels;
    }
    const auto face_chain = trace_conv_chain(cfg_, cfg_.face_convs, cfg_.face_size, 3, "face", nullptr);
    const int face_flat = face_chain.channels * face_chain.extent * face_chain.extent;
    p.face_fc1 = affine_p("face.fc1", cfg_.face_fc_widths[0], face_flat);
    p.face_fc2 = affine_p("face.fc2", cfg_.face_fc_widths[1], cfg_.face_fc_widths[0]);

    const bool eye_adagn = cfg_.variant != Variant::NoAdaGN;
    ch = 3;
    for (std::size_t i = 0; i < cfg_.eye_convs.size(); ++i) {
      p.eye.push_back(conv_block("eye.conv" + std::to_string(i + 1), cfg_.eye_convs[i], ch,
                                 eye_adagn ? ctx : 0, eye_se_at(cfg_, i), pool_after_conv(i)));
      ch = cfg_.eye_convs[i].out_channels;
    }

    const auto eye_chain = trace_conv_chain(cfg_, cfg_.eye_convs, cfg_.eye_size, 3, "eye", nullptr);
    const int stack_ch = 2 * (cfg_.eye_convs[2].out_channels + cfg_.eye_convs[4].out_channels);
    if (cfg_.variant != Variant::NoST && cfg_.variant != Variant::NoSE) {
      p.stack_se = init_se<T>(stack_ch, rng_);
      reg_se("fuse.se", *p.stack_se);
    }
    const int fusion_in = cfg_.variant == Variant::NoST ? eye_chain.channels : stack_ch;
    p.fusion = conv_block(cfg_.variant == Variant::NoST ? "eye_end.conv" : "fuse.conv", cfg_.fusion_conv, fusion_in,
                          eye_adagn ? ctx : 0, /*se=*/false, /*pool=*/false);

    const int fused_extent =
        ops::conv_out_extent(eye_chain.extent, cfg_.fusion_conv.kernel, cfg_.fusion_conv.stride, cfg_.fusion_conv.padding);
    const int fused_flat = cfg_.fusion_conv.out_channels * fused_extent * fused_extent;
    const int eye_fc_in = cfg_.variant == Variant::NoST ? 2 * fused_flat : fused_flat;
    p.eye_fc = affine_p("fuse.fc", cfg_.eye_fc_width, eye_fc_in);

    const int head_in = cfg_.eye_fc_width + cfg_.face_fc_widths[1] + cfg_.rects_fc_widths.back();
    p.head_fc1 = affine_p("head.fc1", cfg_.head_widths[0], head_in);
    p.head_fc2 = affine_p("head.fc2", cfg_.head_widths[1], cfg_.head_widths[0]);

    p.named = std::move(named_);
    return p;
  }

 private:
  AffineParams<T> affine_p(const std::string& name, int d_out, int d_in) {
    AffineParams<T> a = init_affine<T>(d_out, d_in, rng_);
    named_.emplace_back(name + ".weight", a.weight);
    named_.emplace_back(name + ".bias", a.bias);
    return a;
  }

  void reg_se(const std::string& name, SEParams<T>& se) {
    named_.emplace_back(name + ".fc1.weight", se.fc1.weight);
    named_.emplace_back(name + ".fc1.bias", se.fc1.bias);
    named_.emplace_back(name + ".fc2.weight", se.fc2.weight);
    named_.emplace_back(name + ".fc2.bias", se.fc2.bias);
  }

  ConvBlock<T> conv_block(const std::string& name, const ConvSpec& spec, int in_ch, int adagn_ctx, bool se,
                          bool pool) {
    ConvBlock<T> b;
    b.spec = spec;
    b.pool_after = pool;
    b.weight = init_conv_weight<T>(spec.out_channels, in_ch, spec.kernel, rng_);
    b.bias = Tensor<T>::zeros({spec.out_channels});
    b.bias.set_requires_grad(true);
    named_.emplace_back(name + ".weight", b.weight);
    named_.emplace_back(name + ".bias", b.bias);
    const GNConfig gn{gn_groups_for(spec.out_channels), cfg_.gn_eps};
    if (adagn_ctx > 0) {
      b.adagn = init_adagn<T>(spec.out_channels, adagn_ctx, gn, cfg_.leaky_slope, rng_);
      named_.emplace_back(name + ".adagn.fc.weight", b.adagn->fc.weight);
      named_.emplace_back(name + ".adagn.fc.bias", b.adagn->fc.bias);
    } else {
      b.gn = gn;
    }
    if (se) {
      b.se = init_se<T>(spec.out_channels, rng_);
      reg_se(name + ".se", *b.se);
    }
    return b;
  }

  const ModelConfig& cfg_;
  Rng rng_;
  std::vector<std::pair<std::string, Tensor<T>>> named_;
};

/// conv -> AdaGN/GN -> SE -> ReLU -> pool
template <typename T>
Tensor<T> run_block(const ConvBlock<T>& b, const Tensor<T>& x, const Tensor<T>* context, Tape<T>* tape) {
  Tensor<T> y = ops::conv2d(x, b.weight, b.bias, b.spec.stride, b.spec.padding, tape);
  if (b.adagn) {
    y = adagn_forward(y, *context, *b.adagn, tape);
  } else if (b.gn) {
    y = group_normalize(y, *b.gn, tape);
  }
  if (b.se) y = se_forward(y, *b.se, tape);
  y = ops::relu(y, tape);
  if (b.pool_after) y = ops::maxpool2d(y, kPoolKernel, kPoolStride, tape);
  return y;
}

template <typename T>
void expect_shape(const Tensor<T>& t, const std::vector<int>& tail, const char* what) {
  bool ok = t.rank() == static_cast<int>(tail.size()) + 1;
  for (std::size_t i = 0; ok && i < tail.size(); ++i) ok = t.dim(static_cast<int>(i) + 1) == tail[i];
  if (!ok) {
    std::vector<int> want{-1};
    want.insert(want.end(), tail.begin(), tail.end());
    throw ContractViolation(std::string(what) + " expects shape " + shape_str(want) + ", got " +
                            shape_str(t.shape()));
  }
}

}  // namespace

template <typename T>
ModelParams<T> build(const ModelConfig& config, std::uint64_t seed) {
  return Builder<T>(config, seed).run();
}

template <typename T>
Tensor<T> rects_stream(const ModelParams<T>& params, const Tensor<T>& rects, Tape<T>* tape) {
  expect_shape(rects, {12}, "rects_stream");
  Tensor<T> x = rects;
  for (const AffineParams<T>& fc : params.rects_fc) {
    x = ops::leaky_relu(ops::affine(x, fc.weight, fc.bias, tape), params.config.leaky_slope, tape);
  }
  return x;
}

template <typename T>
Tensor<T> face_stream(const ModelParams<T>& params, const Tensor<T>& face, Tape<T>* tape) {
  expect_shape(face, {3, params.config.face_size, params.config.face_size}, "face_stream");
  Tensor<T> x = face;
  for (const ConvBlock<T>& b : params.face) x = run_block<T>(b, x, nullptr, tape);
  x = ops::flatten_batch(x, tape);
  x = ops::leaky_relu(ops::affine(x, params.face_fc1.weight, params.face_fc1.bias, tape), params.config.leaky_slope,
                      tape);
  x = ops::leaky_relu(ops::affine(x, params.face_fc2.weight, params.face_fc2.bias, tape), params.config.leaky_slope,
                      tape);
  return x;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> eye_stream(const ModelParams<T>& params, const Tensor<T>& eye,
                                           const Tensor<T>& context, Tape<T>* tape) {
  expect_shape(eye, {3, params.config.eye_size, params.config.eye_size}, "eye_stream");
  Tensor<T> x = eye;
  Tensor<T> tap3;
  for (std::size_t i = 0; i < params.eye.size(); ++i) {
    x = run_block(params.eye[i], x, &context, tape);
    if (i == 2) tap3 = x;
  }
  return {tap3, x};
}

template <typename T>
Tensor<T> fuse_eyes(const ModelParams<T>& params, const Tensor<T>& l3, const Tensor<T>& l5, const Tensor<T>& r3,
                    const Tensor<T>& r5, const Tensor<T>& context, Tape<T>* tape) {
  if (params.config.variant == Variant::NoST) {
    throw ContractViolation("fuse_eyes is not part of the NoST variant");
  }
  for (const Tensor<T>* m : {&l5, &r3, &r5}) {
    if (m->shape() != l3.shape()) {
      throw InvalidGeometry("fuse_eyes maps disagree: " + shape_str(l3.shape()) + " vs " + shape_str(m->shape()));
    }
  }
  Tensor<T> stacked = ops::channel_concat({l3, l5, r3, r5}, tape);
  if (params.stack_se) stacked = se_forward(stacked, *params.stack_se, tape);
  Tensor<T> fused = run_block(params.fusion, stacked, &context, tape);
  fused = ops::flatten_batch(fused, tape);
  return ops::leaky_relu(ops::affine(fused, params.eye_fc.weight, params.eye_fc.bias, tape),
                         params.config.leaky_slope, tape);
}

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const BatchInput<T>& batch, Tape<T>* tape) {
  const Tensor<T> f_rects = rects_stream(params, batch.rects, tape);
  const Tensor<T> f_face = face_stream(params, batch.face, tape);
  const Tensor<T> context = ops::channel_concat({f_rects, f_face}, tape);

  Tensor<T> f_eye;
  if (params.config.variant == Variant::NoST) {
    auto [l3, l5] = eye_stream(params, batch.eye_left, context, tape);
    auto [r3, r5] = eye_stream(params, batch.eye_right_flipped, context, tape);
    Tensor<T> le = ops::flatten_batch(run_block(params.fusion, l5, &context, tape), tape);
    Tensor<T> re = ops::flatten_batch(run_block(params.fusion, r5, &context, tape), tape);
    Tensor<T> cat = ops::channel_concat({le, re}, tape);
    f_eye = ops::leaky_relu(ops::affine(cat, params.eye_fc.weight, params.eye_fc.bias, tape),
                            params.config.leaky_slope, tape);
  } else {
    auto [l3, l5] = eye_stream(params, batch.eye_left, context, tape);
    auto [r3, r5] = eye_stream(params, batch.eye_right_flipped, context, tape);
    f_eye = fuse_eyes(params, l3, l5, r3, r5, context, tape);
  }

  Tensor<T> head_in = ops::channel_concat({f_eye, f_face, f_rects}, tape);
  Tensor<T> h = ops::leaky_relu(ops::affine(head_in, params.head_fc1.weight, params.head_fc1.bias, tape),
                                params.config.leaky_slope, tape);
  return ops::affine(h, params.head_fc2.weight, params.head_fc2.bias, tape);
}

#define AFFNET_INSTANTIATE_MODEL(T)                                                                               \
  template struct ModelParams<T>;                                                                                 \
  template ModelParams<T> build<T>(const ModelConfig&, std::uint64_t);                                            \
  template Tensor<T> rects_stream<T>(const ModelParams<T>&, const Tensor<T>&, Tape<T>*);                          \
  template Tensor<T> face_stream<T>(const ModelParams<T>&, const Tensor<T>&, Tape<T>*);                           \
  template std::pair<Tensor<T>, Tensor<T>> eye_stream<T>(const ModelParams<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                         Tape<T>*);                                               \
  template Tensor<T> fuse_eyes<T>(const ModelParams<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                  const Tensor<T>&, const Tensor<T>&, Tape<T>*);                                  \
  template Tensor<T> forward<T>(const ModelParams<T>&, const BatchInput<T>&, Tape<T>*);

AFFNET_INSTANTIATE_MODEL(float)
AFFNET_INSTANTIATE_MODEL(double)

#undef AFFNET_INSTANTIATE_MODEL

}  // namespace affnet
