// SPDX-License-Identifier: Apache-2.0
#include "affnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace affnet::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
void maybe_check_finite(const char* op, const Tensor<T>& out) {
  if (!finite_checks_enabled()) return;
  for (const T x : out.values()) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError(std::string("non-finite value in output of op '") + op + "'");
    }
  }
}

struct Nchw {
  int n, c, h, w;
  bool batched;
};

Nchw parse_nchw(const std::vector<int>& shape, const char* op) {
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2], false};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3], true};
  throw ContractViolation(std::string(op) + " expects [C,H,W] or [N,C,H,W], got " + shape_str(shape));
}

std::vector<int> spatial_shape(const Nchw& d, int c, int h, int w) {
  if (d.batched) return {d.n, c, h, w};
  return {c, h, w};
}

// Concat/slice axis: channels for images, features for [N,D] matrices.
int channel_axis(int rank) { return rank == 3 ? 0 : 1; }

// col is [C*k*k, OH*OW] row-major. Zero padding.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int padding, int oh, int ow, T* col) {
  const int ohw = oh * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + ((static_cast<std::int64_t>(ch) * k + ki) * k + kj) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            dst += ow;
            continue;
          }
          const T* src_row = x + (static_cast<std::int64_t>(ch) * h + iy) * w;
          int ox = 0;
          int ix = -padding + kj;
          for (; ox < ow && ix < 0; ++ox, ix += stride) *dst++ = T(0);
          if (stride == 1) {
            const int run = std::min(ow - ox, w - ix);
            if (run > 0) {
              std::memcpy(dst, src_row + ix, static_cast<std::size_t>(run) * sizeof(T));
              dst += run;
              ox += run;
              ix += run;
            }
          } else {
            for (; ox < ow && ix < w; ++ox, ix += stride) *dst++ = src_row[ix];
          }
          for (; ox < ow; ++ox) *dst++ = T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int padding, int oh, int ow, T* dx) {
  const int ohw = oh * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + ((static_cast<std::int64_t>(ch) * k + ki) * k + kj) * ohw;
        for (int oy = 0; oy < oh; ++oy, src += ow) {
          const int iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= h) continue;
          T* dst_row = dx + (static_cast<std::int64_t>(ch) * h + iy) * w;
          int ix = -padding + kj;
          for (int ox = 0; ox < ow; ++ox, ix += stride) {
            if (ix >= 0 && ix < w) dst_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
AlignedVec<T>& conv_scratch() {
  thread_local AlignedVec<T> buf;
  return buf;
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding) {
  if (stride < 1) throw ContractViolation("stride must be >= 1");
  if (padding < 0) throw ContractViolation("padding must be >= 0");
  if (kernel > in + 2 * padding) {
    throw InvalidGeometry("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                          std::to_string(in + 2 * padding));
  }
  const int out = (in + 2 * padding - kernel) / stride + 1;
  if (out <= 0) throw InvalidGeometry("non-positive conv output extent");
  return out;
}

int pool_out_extent(int in, int kernel, int stride) {
  if (kernel > in) throw InvalidGeometry("pool kernel " + std::to_string(kernel) + " exceeds extent " + std::to_string(in));
  return (in - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding,
                 Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "conv2d");
  if (weight.rank() != 4) throw ContractViolation("conv2d weight must be [C_out,C_in,k,k]");
  const int k_out = weight.dim(0), k_in = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (kh != kw) throw ContractViolation("conv2d requires square kernels");
  if (k_in != d.c) {
    throw ContractViolation("conv2d input channels " + std::to_string(d.c) + " do not match weight C_in " +
                            std::to_string(k_in));
  }
  if (bias.rank() != 1 || bias.dim(0) != k_out) throw ContractViolation("conv2d bias must be [C_out]");
  const int oh = conv_out_extent(d.h, kh, stride, padding);
  const int ow = conv_out_extent(d.w, kh, stride, padding);
  const int ohw = oh * ow;
  const int ckk = d.c * kh * kh;

  Tensor<T> out(spatial_shape(d, k_out, oh, ow));
  AlignedVec<T>& col = conv_scratch<T>();
  col.resize(static_cast<std::size_t>(ckk) * ohw);

  CMapMat<T> wmat(weight.data(), k_out, ckk);
  CMapVec<T> bvec(bias.data(), k_out);
  const std::int64_t in_stride = static_cast<std::int64_t>(d.c) * d.h * d.w;
  const std::int64_t out_stride = static_cast<std::int64_t>(k_out) * ohw;
  for (int n = 0; n < d.n; ++n) {
    im2col(input.data() + n * in_stride, d.c, d.h, d.w, kh, stride, padding, oh, ow, col.data());
    CMapMat<T> cmat(col.data(), ckk, ohw);
    MapMat<T> omat(out.data() + n * out_stride, k_out, ohw);
    omat.noalias() = wmat * cmat;
    omat.colwise() += bvec;
  }
  maybe_check_finite("conv2d", out);

  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    const bool need_dw = tape->wants_grad(weight);
    const bool need_db = tape->wants_grad(bias);
    Tensor<T> in_h = input, w_h = weight, b_h = bias, out_h = out;
    tape->record("conv2d", {input, weight, bias}, out,
                 [=]() mutable {
                   const Nchw dd = parse_nchw(in_h.shape(), "conv2d");
                   AlignedVec<T>& scratch = conv_scratch<T>();
                   scratch.resize(static_cast<std::size_t>(ckk) * ohw);
                   AlignedVec<T> dcol;
                   if (need_dx) dcol.resize(static_cast<std::size_t>(ckk) * ohw);
                   CMapMat<T> wm(w_h.data(), k_out, ckk);
                   for (int n = 0; n < dd.n; ++n) {
                     CMapMat<T> gm(out_h.grad() + n * out_stride, k_out, ohw);
                     if (need_dw || need_dx) {
                       if (need_dw) {
                         im2col(in_h.data() + n * in_stride, dd.c, dd.h, dd.w, kh, stride, padding, oh, ow,
                                scratch.data());
                         CMapMat<T> cm(scratch.data(), ckk, ohw);
                         MapMat<T> dwm(w_h.grad(), k_out, ckk);
                         dwm.noalias() += gm * cm.transpose();
                       }
                       if (need_dx) {
                         MapMat<T> dcm(dcol.data(), ckk, ohw);
                         dcm.noalias() = wm.transpose() * gm;
                         col2im_add(dcol.data(), dd.c, dd.h, dd.w, kh, stride, padding, oh, ow,
                                    in_h.grad() + n * in_stride);
                       }
                     }
                     if (need_db) {
                       MapVec<T> dbv(b_h.grad(), k_out);
                       dbv.noalias() += gm.rowwise().sum();
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int kernel, int stride, Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "maxpool2d");
  if (stride < 1) throw ContractViolation("stride must be >= 1");
  const int oh = pool_out_extent(d.h, kernel, stride);
  const int ow = pool_out_extent(d.w, kernel, stride);
  Tensor<T> out(spatial_shape(d, d.c, oh, ow));

  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  const T* x = input.data();
  T* o = out.data();
  std::int64_t oi = 0;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const T* plane = x + (static_cast<std::int64_t>(n) * d.c + c) * d.h * d.w;
      const std::int64_t plane_off = (static_cast<std::int64_t>(n) * d.c + c) * d.h * d.w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = 0;
          for (int ki = 0; ki < kernel; ++ki) {
            const int iy = oy * stride + ki;
            for (int kj = 0; kj < kernel; ++kj) {
              const int ix = ox * stride + kj;
              const T v = plane[iy * d.w + ix];
              if (v > best) {  // strict: first occurrence wins on ties
                best = v;
                best_idx = plane_off + iy * d.w + ix;
              }
            }
          }
          o[oi] = best;
          argmax[static_cast<std::size_t>(oi)] = best_idx;
        }
      }
    }
  }
  maybe_check_finite("maxpool2d", out);

  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("maxpool2d", {input}, out, [=, am = std::move(argmax)]() {
      if (!need_dx) return;
      Tensor<T> in_mut = in_h;
      T* dx = in_mut.grad();
      const T* g = out_h.grad();
      for (std::size_t i = 0; i < am.size(); ++i) dx[am[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape) {
  if (input.rank() != 2) throw ContractViolation("affine input must be [N,D_in], got " + shape_str(input.shape()));
  if (weight.rank() != 2) throw ContractViolation("affine weight must be [D_out,D_in]");
  const int n = input.dim(0), d_in = input.dim(1);
  const int d_out = weight.dim(0);
  if (weight.dim(1) != d_in) {
    throw ContractViolation("affine dimension mismatch: input D_in " + std::to_string(d_in) + " vs weight " +
                            std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != d_out) throw ContractViolation("affine bias must be [D_out]");

  Tensor<T> out({n, d_out});
  CMapMat<T> xm(input.data(), n, d_in);
  CMapMat<T> wm(weight.data(), d_out, d_in);
  MapMat<T> om(out.data(), n, d_out);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += CMapVec<T>(bias.data(), d_out).transpose();
  maybe_check_finite("affine", out);

  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    const bool need_dw = tape->wants_grad(weight);
    const bool need_db = tape->wants_grad(bias);
    Tensor<T> in_h = input, w_h = weight, b_h = bias, out_h = out;
    tape->record("affine", {input, weight, bias}, out, [=]() mutable {
      CMapMat<T> gm(out_h.grad(), n, d_out);
      if (need_dx) {
        CMapMat<T> wm2(w_h.data(), d_out, d_in);
        MapMat<T> dxm(in_h.grad(), n, d_in);
        dxm.noalias() += gm * wm2;
      }
      if (need_dw) {
        CMapMat<T> xm2(in_h.data(), n, d_in);
        MapMat<T> dwm(w_h.grad(), d_out, d_in);
        dwm.noalias() += gm.transpose() * xm2;
      }
      if (need_db) {
        MapVec<T> dbv(b_h.grad(), d_out);
        dbv.noalias() += gm.colwise().sum().transpose();
      }
    });
  }
  return out;
}

namespace {

template <typename T, typename FwdFn, typename DerivFn>
Tensor<T> elementwise(const char* name, const Tensor<T>& input, FwdFn f, DerivFn dfdx, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* o = out.data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = f(x[i]);
  maybe_check_finite(name, out);
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record(name, {input}, out, [=]() mutable {
      if (!need_dx) return;
      const T* xv = in_h.data();
      const T* ov = out_h.data();
      const T* g = out_h.grad();
      T* dx = in_h.grad();
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * dfdx(xv[i], ov[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape) {
  return elementwise<T>(
      "relu", input, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); }, tape);
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, double slope, Tape<T>* tape) {
  const T s = static_cast<T>(slope);
  return elementwise<T>(
      "leaky_relu", input, [s](T x) { return x > T(0) ? x : s * x; },
      [s](T x, T) { return x > T(0) ? T(1) : s; }, tape);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape) {
  return elementwise<T>(
      "sigmoid", input,
      [](T x) {
        if (x >= T(0)) {
          const T e = std::exp(-x);
          return T(1) / (T(1) + e);
        }
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); }, tape);
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& input, const ActivationSpec& spec, Tape<T>* tape) {
  switch (spec.kind) {
    case Activation::Relu:
      return relu(input, tape);
    case Activation::LeakyRelu:
      return leaky_relu(input, spec.slope, tape);
    case Activation::Sigmoid:
      return sigmoid(input, tape);
  }
  throw ContractViolation("unknown activation kind");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "global_avg_pool");
  Tensor<T> out(d.batched ? std::vector<int>{d.n, d.c} : std::vector<int>{d.c});
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  const T inv = T(1) / static_cast<T>(hw);
  const T* x = input.data();
  T* o = out.data();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(d.n) * d.c; ++nc) {
    T acc = T(0);
    const T* p = x + nc * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
    o[nc] = acc * inv;
  }
  maybe_check_finite("global_avg_pool", out);
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("global_avg_pool", {input}, out, [=]() mutable {
      if (!need_dx) return;
      T* dx = in_h.grad();
      const T* g = out_h.grad();
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(d.n) * d.c; ++nc) {
        const T gv = g[nc] * inv;
        T* p = dx + nc * hw;
        for (std::int64_t i = 0; i < hw; ++i) p[i] += gv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_concat(std::span<const Tensor<T>> parts, Tape<T>* tape) {
  if (parts.empty()) throw ContractViolation("channel_concat needs at least one part");
  const int rank = parts[0].rank();
  if (rank < 2 || rank > 4) throw ContractViolation("channel_concat supports ranks 2..4");
  const int axis = channel_axis(rank);
  int total_c = 0;
  for (const Tensor<T>& p : parts) {
    if (p.rank() != rank) throw ContractViolation("channel_concat parts must share rank");
    for (int a = 0; a < rank; ++a) {
      if (a == axis) continue;
      if (p.dim(a) != parts[0].dim(a)) {
        throw InvalidGeometry("channel_concat extent mismatch at axis " + std::to_string(a) + ": " +
                              shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    total_c += p.dim(axis);
  }
  std::vector<int> out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = total_c;
  Tensor<T> out(out_shape);

  std::int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= out_shape[static_cast<std::size_t>(a)];
  for (int a = axis + 1; a < rank; ++a) inner *= out_shape[static_cast<std::size_t>(a)];

  std::int64_t c_off = 0;
  for (const Tensor<T>& p : parts) {
    const std::int64_t pc = p.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * total_c + c_off) * inner, p.data() + o * pc * inner,
                  static_cast<std::size_t>(pc * inner) * sizeof(T));
    }
    c_off += pc;
  }
  maybe_check_finite("channel_concat", out);

  if (tape) {
    std::vector<Tensor<T>> part_handles(parts.begin(), parts.end());
    std::vector<bool> needs(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) needs[i] = tape->wants_grad(parts[i]);
    Tensor<T> out_h = out;
    tape->record("channel_concat", part_handles, out, [=, ph = part_handles]() mutable {
      const T* g = out_h.grad();
      std::int64_t off = 0;
      for (std::size_t i = 0; i < ph.size(); ++i) {
        const std::int64_t pc = ph[i].dim(axis);
        if (needs[i]) {
          T* dp = ph[i].grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = g + (o * total_c + off) * inner;
            T* dst = dp + o * pc * inner;
            for (std::int64_t j = 0; j < pc * inner; ++j) dst[j] += src[j];
          }
        }
        off += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_concat(std::initializer_list<Tensor<T>> parts, Tape<T>* tape) {
  std::vector<Tensor<T>> v(parts);
  return channel_concat(std::span<const Tensor<T>>(v.data(), v.size()), tape);
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int from, int to, Tape<T>* tape) {
  const int rank = input.rank();
  if (rank < 2 || rank > 4) throw ContractViolation("slice_channels supports ranks 2..4");
  const int axis = channel_axis(rank);
  const int c = input.dim(axis);
  if (from < 0 || to > c || from >= to) throw ContractViolation("slice_channels range invalid");
  std::vector<int> out_shape = input.shape();
  out_shape[static_cast<std::size_t>(axis)] = to - from;
  Tensor<T> out(out_shape);

  std::int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= input.dim(a);
  for (int a = axis + 1; a < rank; ++a) inner *= input.dim(a);
  const std::int64_t oc = to - from;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * oc * inner, input.data() + (o * c + from) * inner,
                static_cast<std::size_t>(oc * inner) * sizeof(T));
  }
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("slice_channels", {input}, out, [=]() mutable {
      if (!need_dx) return;
      T* dx = in_h.grad();
      const T* g = out_h.grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        T* dst = dx + (o * c + from) * inner;
        const T* src = g + o * oc * inner;
        for (std::int64_t j = 0; j < oc * inner; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

namespace {

template <typename T>
void check_channel_vector(const Tensor<T>& x, const Tensor<T>& v, const char* op) {
  const Nchw d = parse_nchw(x.shape(), op);
  if (d.batched) {
    if (v.rank() != 2 || v.dim(0) != d.n || v.dim(1) != d.c) {
      throw ContractViolation(std::string(op) + " per-channel vector must be [N,C]=" + shape_str({d.n, d.c}) +
                              ", got " + shape_str(v.shape()));
    }
  } else {
    if (v.rank() != 1 || v.dim(0) != d.c) {
      throw ContractViolation(std::string(op) + " per-channel vector must be [C], got " + shape_str(v.shape()));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> modulate_channels(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift, Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "modulate_channels");
  check_channel_vector(input, scale, "modulate_channels");
  check_channel_vector(input, shift, "modulate_channels");
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  Tensor<T> out(input.shape());
  const T* x = input.data();
  const T* sc = scale.data();
  const T* sh = shift.data();
  T* o = out.data();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(d.n) * d.c; ++nc) {
    const T s = sc[nc], b = sh[nc];
    const T* p = x + nc * hw;
    T* q = o + nc * hw;
    for (std::int64_t i = 0; i < hw; ++i) q[i] = s * p[i] + b;
  }
  maybe_check_finite("modulate_channels", out);
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    const bool need_ds = tape->wants_grad(scale);
    const bool need_db = tape->wants_grad(shift);
    Tensor<T> in_h = input, sc_h = scale, sh_h = shift, out_h = out;
    tape->record("modulate_channels", {input, scale, shift}, out, [=]() mutable {
      const T* g = out_h.grad();
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(d.n) * d.c; ++nc) {
        const T* gp = g + nc * hw;
        if (need_dx) {
          const T s = sc_h.data()[nc];
          T* dx = in_h.grad() + nc * hw;
          for (std::int64_t i = 0; i < hw; ++i) dx[i] += s * gp[i];
        }
        if (need_ds) {
          const T* xp = in_h.data() + nc * hw;
          T acc = T(0);
          for (std::int64_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
          sc_h.grad()[nc] += acc;
        }
        if (need_db) {
          T acc = T(0);
          for (std::int64_t i = 0; i < hw; ++i) acc += gp[i];
          sh_h.grad()[nc] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& input, const Tensor<T>& scale, Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "scale_channels");
  check_channel_vector(input, scale, "scale_channels");
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  Tensor<T> out(input.shape());
  const T* x = input.data();
  const T* sc = scale.data();
  T* o = out.data();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(d.n) * d.c; ++nc) {
    const T s = sc[nc];
    const T* p = x + nc * hw;
    T* q = o + nc * hw;
    for (std::int64_t i = 0; i < hw; ++i) q[i] = s * p[i];
  }
  maybe_check_finite("scale_channels", out);
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    const bool need_ds = tape->wants_grad(scale);
    Tensor<T> in_h = input, sc_h = scale, out_h = out;
    tape->record("scale_channels", {input, scale}, out, [=]() mutable {
      const T* g = out_h.grad();
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(d.n) * d.c; ++nc) {
        const T* gp = g + nc * hw;
        if (need_dx) {
          const T s = sc_h.data()[nc];
          T* dx = in_h.grad() + nc * hw;
          for (std::int64_t i = 0; i < hw; ++i) dx[i] += s * gp[i];
        }
        if (need_ds) {
          const T* xp = in_h.data() + nc * hw;
          T acc = T(0);
          for (std::int64_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
          sc_h.grad()[nc] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, int groups, double eps, Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "group_norm");
  if (groups < 1) throw ContractViolation("group_norm needs groups >= 1");
  if (d.c % groups != 0) {
    throw ContractViolation("group_norm groups " + std::to_string(groups) + " do not divide channels " +
                            std::to_string(d.c));
  }
  if (!(eps > 0)) throw ContractViolation("group_norm eps must be positive");
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t group_sz = (d.c / groups) * hw;
  const std::int64_t ng = static_cast<std::int64_t>(d.n) * groups;

  Tensor<T> out(input.shape());
  std::vector<T> rstd(static_cast<std::size_t>(ng));
  const T* x = input.data();
  T* o = out.data();
  for (std::int64_t g = 0; g < ng; ++g) {
    const T* p = x + g * group_sz;
    T* q = o + g * group_sz;
    T mean = T(0);
    for (std::int64_t i = 0; i < group_sz; ++i) mean += p[i];
    mean /= static_cast<T>(group_sz);
    T var = T(0);
    for (std::int64_t i = 0; i < group_sz; ++i) {
      const T c = p[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(group_sz);
    const T r = T(1) / std::sqrt(var + static_cast<T>(eps));
    rstd[static_cast<std::size_t>(g)] = r;
    for (std::int64_t i = 0; i < group_sz; ++i) q[i] = (p[i] - mean) * r;
  }
  maybe_check_finite("group_norm", out);

  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("group_norm", {input}, out, [=, rs = std::move(rstd)]() mutable {
      if (!need_dx) return;
      const T* g = out_h.grad();
      const T* y = out_h.data();
      T* dx = in_h.grad();
      const T inv_m = T(1) / static_cast<T>(group_sz);
      for (std::int64_t gi = 0; gi < ng; ++gi) {
        const T* gp = g + gi * group_sz;
        const T* yp = y + gi * group_sz;
        T* dp = dx + gi * group_sz;
        T sum_g = T(0), sum_gy = T(0);
        for (std::int64_t i = 0; i < group_sz; ++i) {
          sum_g += gp[i];
          sum_gy += gp[i] * yp[i];
        }
        const T mg = sum_g * inv_m;
        const T mgy = sum_gy * inv_m;
        const T r = rs[static_cast<std::size_t>(gi)];
        for (std::int64_t i = 0; i < group_sz; ++i) {
          dp[i] += r * (gp[i] - mg - yp[i] * mgy);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, std::vector<int> shape, Tape<T>* tape) {
  std::int64_t known = 1;
  int wildcard = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (wildcard >= 0) throw ContractViolation("reshape allows a single -1");
      wildcard = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (wildcard >= 0) {
    if (known == 0 || input.numel() % known != 0) throw ContractViolation("reshape cannot infer extent");
    shape[static_cast<std::size_t>(wildcard)] = static_cast<int>(input.numel() / known);
  }
  if (shape_numel(shape) != input.numel()) {
    throw ContractViolation("reshape element count mismatch: " + shape_str(input.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(shape);
  out.values() = input.values();
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("reshape", {input}, out, [=]() mutable {
      if (!need_dx) return;
      T* dx = in_h.grad();
      const T* g = out_h.grad();
      const std::int64_t n = in_h.numel();
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> flatten_batch(const Tensor<T>& input, Tape<T>* tape) {
  if (input.rank() < 2) throw ContractViolation("flatten_batch needs rank >= 2");
  return reshape(input, {input.dim(0), -1}, tape);
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& input, Tape<T>* tape) {
  Tensor<T> out({1});
  T acc = T(0);
  for (const T x : input.values()) acc += x;
  out.data()[0] = acc;
  maybe_check_finite("reduce_sum", out);
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("reduce_sum", {input}, out, [=]() mutable {
      if (!need_dx) return;
      const T g = out_h.grad()[0];
      T* dx = in_h.grad();
      const std::int64_t n = in_h.numel();
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, const std::vector<T>& coeffs, Tape<T>* tape) {
  if (static_cast<std::int64_t>(coeffs.size()) != input.numel()) {
    throw ContractViolation("weighted_sum coefficient count mismatch");
  }
  Tensor<T> out({1});
  T acc = T(0);
  const T* x = input.data();
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * x[i];
  out.data()[0] = acc;
  maybe_check_finite("weighted_sum", out);
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("weighted_sum", {input}, out, [=, c = coeffs]() mutable {
      if (!need_dx) return;
      const T g = out_h.grad()[0];
      T* dx = in_h.grad();
      for (std::size_t i = 0; i < c.size(); ++i) dx[i] += g * c[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape) {
  if (pred.shape() != target.shape()) {
    throw ContractViolation("smooth_l1 shape mismatch: " + shape_str(pred.shape()) + " vs " +
                            shape_str(target.shape()));
  }
  if (pred.rank() != 2) throw ContractViolation("smooth_l1 expects [N,K]");
  const int n = pred.dim(0);
  Tensor<T> out({1});
  const T* p = pred.data();
  const T* t = target.data();
  T acc = T(0);
  const std::int64_t total = pred.numel();
  for (std::int64_t i = 0; i < total; ++i) {
    const T d = p[i] - t[i];
    const T a = std::abs(d);
    acc += a < T(1) ? T(0.5) * d * d : a - T(0.5);
  }
  out.data()[0] = acc / static_cast<T>(n);
  maybe_check_finite("smooth_l1", out);
  if (tape) {
    const bool need_dp = tape->wants_grad(pred);
    const bool need_dt = tape->wants_grad(target);
    Tensor<T> p_h = pred, t_h = target, out_h = out;
    tape->record("smooth_l1", {pred, target}, out, [=]() mutable {
      const T g = out_h.grad()[0] / static_cast<T>(n);
      const T* pv = p_h.data();
      const T* tv = t_h.data();
      for (std::int64_t i = 0; i < total; ++i) {
        const T d = pv[i] - tv[i];
        const T w = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
        if (need_dp) p_h.grad()[i] += g * w;
        if (need_dt) t_h.grad()[i] -= g * w;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& input, Tape<T>* tape) {
  const Nchw d = parse_nchw(input.shape(), "hflip");
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* o = out.data();
  for (std::int64_t row = 0; row < static_cast<std::int64_t>(d.n) * d.c * d.h; ++row) {
    const T* src = x + row * d.w;
    T* dst = o + row * d.w;
    for (int j = 0; j < d.w; ++j) dst[j] = src[d.w - 1 - j];
  }
  if (tape) {
    const bool need_dx = tape->wants_grad(input);
    Tensor<T> in_h = input, out_h = out;
    tape->record("hflip", {input}, out, [=]() mutable {
      if (!need_dx) return;
      T* dx = in_h.grad();
      const T* g = out_h.grad();
      for (std::int64_t row = 0; row < static_cast<std::int64_t>(d.n) * d.c * d.h; ++row) {
        const T* src = g + row * d.w;
        T* dst = dx + row * d.w;
        for (int j = 0; j < d.w; ++j) dst[j] += src[d.w - 1 - j];
      }
    });
  }
  return out;
}

#define AFFNET_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int, Tape<T>*);     \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, int, int, Tape<T>*);                                      \
  template Tensor<T> affine<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);               \
  template Tensor<T> relu<T>(const Tensor<T>&, Tape<T>*);                                                     \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, double, Tape<T>*);                                       \
  template Tensor<T> sigmoid<T>(const Tensor<T>&, Tape<T>*);                                                  \
  template Tensor<T> apply_activation<T>(const Tensor<T>&, const ActivationSpec&, Tape<T>*);                  \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&, Tape<T>*);                                          \
  template Tensor<T> channel_concat<T>(std::span<const Tensor<T>>, Tape<T>*);                                 \
  template Tensor<T> channel_concat<T>(std::initializer_list<Tensor<T>>, Tape<T>*);                           \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int, Tape<T>*);                                 \
  template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                         \
  template Tensor<T> modulate_channels<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);    \
  template Tensor<T> group_norm<T>(const Tensor<T>&, int, double, Tape<T>*);                                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<int>, Tape<T>*);                                \
  template Tensor<T> flatten_batch<T>(const Tensor<T>&, Tape<T>*);                                            \
  template Tensor<T> reduce_sum<T>(const Tensor<T>&, Tape<T>*);                                               \
  template Tensor<T> weighted_sum<T>(const Tensor<T>&, const std::vector<T>&, Tape<T>*);                      \
  template Tensor<T> smooth_l1<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                              \
  template Tensor<T> hflip<T>(const Tensor<T>&, Tape<T>*);

AFFNET_INSTANTIATE_OPS(float)
AFFNET_INSTANTIATE_OPS(double)

#undef AFFNET_INSTANTIATE_OPS

}  // namespace affnet::ops
