#pragma once

// Forward and backward kernels shared by the tape ops and the tape-free
// diagnostic paths. Backward kernels accumulate into their gradient outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "sasp/tensor.hpp"

namespace sasp {

struct Padding {
  std::size_t h = 0;
  std::size_t w = 0;
};

namespace kernels {

inline void require_rank4(const Shape& s, const char* what) {
  if (s.rank != 4) throw InvalidArgument(std::string(what) + " expects a rank-4 tensor, got " + s.str());
}

inline Shape conv2d_output_shape(const Shape& x, const Shape& k, const Shape& b, Padding pad) {
  require_rank4(x, "conv2d input");
  require_rank4(k, "conv2d kernel");
  if (x.c() != k.c())
    throw InvalidArgument("conv2d channel mismatch: input " + x.str() + " vs kernel " + k.str());
  if (k.h() % 2 == 0 || k.w() % 2 == 0)
    throw InvalidArgument("conv2d kernel extents must be odd, got kernel " + k.str());
  if (b.size() != k.n())
    throw InvalidArgument("conv2d bias " + b.str() + " does not match kernel " + k.str());
  const long oh = static_cast<long>(x.h() + 2 * pad.h) - static_cast<long>(k.h()) + 1;
  const long ow = static_cast<long>(x.w() + 2 * pad.w) - static_cast<long>(k.w()) + 1;
  if (oh < 1 || ow < 1)
    throw InvalidArgument("conv2d output would be empty for input " + x.str() + " and kernel " + k.str());
  return Shape::nchw(x.n(), k.n(), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow));
}

// Valid output range [lo, hi) along one axis for kernel tap `t`.
inline void tap_range(std::size_t t, std::size_t pad, std::size_t in, std::size_t out,
                      std::size_t& lo, std::size_t& hi) {
  // input index = o + t - pad must lie in [0, in)
  lo = pad > t ? pad - t : 0;
  const long upper = static_cast<long>(in) + static_cast<long>(pad) - static_cast<long>(t);
  hi = static_cast<std::size_t>(std::clamp<long>(upper, 0, static_cast<long>(out)));
  if (lo > hi) lo = hi;
}

// Cross-correlation with zero padding, stride 1, plus per-channel bias.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& k, const Tensor<Scalar>& b,
                      Padding pad) {
  const Shape ys = conv2d_output_shape(x.shape(), k.shape(), b.shape(), pad);
  Tensor<Scalar> y(ys);
  const std::size_t C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  const std::size_t O = ys.c(), OH = ys.h(), OW = ys.w();
  const std::size_t KH = k.shape().h(), KW = k.shape().w();
  for (std::size_t n = 0; n < ys.n(); ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      Scalar* yp = &y.at(n, o, 0, 0);
      std::fill(yp, yp + OH * OW, b[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const Scalar* xp = &x.at(n, c, 0, 0);
        for (std::size_t ki = 0; ki < KH; ++ki) {
          std::size_t i0, i1;
          tap_range(ki, pad.h, H, OH, i0, i1);
          for (std::size_t kj = 0; kj < KW; ++kj) {
            std::size_t j0, j1;
            tap_range(kj, pad.w, W, OW, j0, j1);
            const Scalar wv = k.at(o, c, ki, kj);
            for (std::size_t i = i0; i < i1; ++i) {
              Scalar* yrow = yp + i * OW;
              const Scalar* xrow = xp + (i + ki - pad.h) * W;
              for (std::size_t j = j0; j < j1; ++j) yrow[j] += wv * xrow[j + kj - pad.w];
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& k, const Tensor<Scalar>& gy,
                     Padding pad, Tensor<Scalar>* gx, Tensor<Scalar>* gk, Tensor<Scalar>* gb) {
  const Shape& ys = gy.shape();
  const std::size_t C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  const std::size_t O = ys.c(), OH = ys.h(), OW = ys.w();
  const std::size_t KH = k.shape().h(), KW = k.shape().w();
  for (std::size_t n = 0; n < ys.n(); ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      const Scalar* gp = &gy.at(n, o, 0, 0);
      if (gb) {
        Scalar acc = 0;
        for (std::size_t i = 0; i < OH * OW; ++i) acc += gp[i];
        (*gb)[o] += acc;
      }
      for (std::size_t c = 0; c < C; ++c) {
        const Scalar* xp = &x.at(n, c, 0, 0);
        Scalar* gxp = gx ? &gx->at(n, c, 0, 0) : nullptr;
        for (std::size_t ki = 0; ki < KH; ++ki) {
          std::size_t i0, i1;
          tap_range(ki, pad.h, H, OH, i0, i1);
          for (std::size_t kj = 0; kj < KW; ++kj) {
            std::size_t j0, j1;
            tap_range(kj, pad.w, W, OW, j0, j1);
            const Scalar wv = k.at(o, c, ki, kj);
            Scalar wacc = 0;
            for (std::size_t i = i0; i < i1; ++i) {
              const Scalar* grow = gp + i * OW;
              const std::size_t row = (i + ki - pad.h) * W;
              const Scalar* xrow = xp + row;
              for (std::size_t j = j0; j < j1; ++j) wacc += grow[j] * xrow[j + kj - pad.w];
              if (gxp) {
                Scalar* gxrow = gxp + row;
                for (std::size_t j = j0; j < j1; ++j) gxrow[j + kj - pad.w] += grow[j] * wv;
              }
            }
            if (gk) gk->at(o, c, ki, kj) += wacc;
          }
        }
      }
    }
  }
}

// Strip and global average pooling: (h,1) row means, (1,w) column means, (1,1) global mean.
inline void check_pool_shape(const Shape& x, std::size_t oh, std::size_t ow) {
  require_rank4(x, "adaptive_avg_pool");
  const bool rows = oh == x.h() && ow == 1;
  const bool cols = oh == 1 && ow == x.w();
  const bool global = oh == 1 && ow == 1;
  if (!(rows || cols || global))
    throw InvalidArgument("adaptive_avg_pool supports only (h,1), (1,w) or (1,1) outputs; got (" +
                          std::to_string(oh) + "," + std::to_string(ow) + ") for input " + x.str());
}

template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool(const Tensor<Scalar>& x, std::size_t oh, std::size_t ow) {
  check_pool_shape(x.shape(), oh, ow);
  const Shape& s = x.shape();
  const std::size_t H = s.h(), W = s.w();
  // Each output cell averages a (wh x ww) window.
  const std::size_t wh = H / oh, ww = W / ow;
  const Scalar count = static_cast<Scalar>(wh * ww);
  Tensor<Scalar> y(Shape::nchw(s.n(), s.c(), oh, ow));
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t a = 0; a < oh; ++a)
        for (std::size_t b = 0; b < ow; ++b) {
          Scalar acc = 0;
          for (std::size_t i = a * wh; i < (a + 1) * wh; ++i)
            for (std::size_t j = b * ww; j < (b + 1) * ww; ++j) acc += x.at(n, c, i, j);
          y.at(n, c, a, b) = acc / count;
        }
  return y;
}

template <typename Scalar>
void adaptive_avg_pool_backward(const Tensor<Scalar>& gy, Tensor<Scalar>& gx) {
  const Shape& s = gx.shape();
  const std::size_t oh = gy.shape().h(), ow = gy.shape().w();
  const std::size_t wh = s.h() / oh, ww = s.w() / ow;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(wh * ww);
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t i = 0; i < s.h(); ++i)
        for (std::size_t j = 0; j < s.w(); ++j) gx.at(n, c, i, j) += gy.at(n, c, i / wh, j / ww) * inv;
}

// Half-pixel (align-corners-false) source coordinate for one output index.
struct LerpTap {
  std::size_t i0;
  std::size_t i1;
  double frac;
};

inline LerpTap lerp_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size) {
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  double src = (static_cast<double>(out_index) + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  std::size_t i0 = static_cast<std::size_t>(src);
  if (i0 > in_size - 1) i0 = in_size - 1;
  const std::size_t i1 = std::min(i0 + 1, in_size - 1);
  // Coincident taps (edge or singleton axis) copy the source value exactly.
  return {i0, i1, i1 == i0 ? 0.0 : src - static_cast<double>(i0)};
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& x, std::size_t oh, std::size_t ow) {
  require_rank4(x.shape(), "bilinear_upsample");
  const Shape& s = x.shape();
  if (oh < s.h() || ow < s.w())
    throw InvalidArgument("bilinear_upsample cannot downsample " + s.str() + " to (" +
                          std::to_string(oh) + "," + std::to_string(ow) + ")");
  Tensor<Scalar> y(Shape::nchw(s.n(), s.c(), oh, ow));
  for (std::size_t i = 0; i < oh; ++i) {
    const LerpTap ty = lerp_tap(i, s.h(), oh);
    const Scalar fy = static_cast<Scalar>(ty.frac);
    for (std::size_t j = 0; j < ow; ++j) {
      const LerpTap tx = lerp_tap(j, s.w(), ow);
      const Scalar fx = static_cast<Scalar>(tx.frac);
      for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c) {
          const Scalar top = (1 - fx) * x.at(n, c, ty.i0, tx.i0) + fx * x.at(n, c, ty.i0, tx.i1);
          const Scalar bot = (1 - fx) * x.at(n, c, ty.i1, tx.i0) + fx * x.at(n, c, ty.i1, tx.i1);
          y.at(n, c, i, j) = (1 - fy) * top + fy * bot;
        }
    }
  }
  return y;
}

template <typename Scalar>
void bilinear_upsample_backward(const Tensor<Scalar>& gy, Tensor<Scalar>& gx) {
  const Shape& s = gx.shape();
  const std::size_t oh = gy.shape().h(), ow = gy.shape().w();
  for (std::size_t i = 0; i < oh; ++i) {
    const LerpTap ty = lerp_tap(i, s.h(), oh);
    const Scalar fy = static_cast<Scalar>(ty.frac);
    for (std::size_t j = 0; j < ow; ++j) {
      const LerpTap tx = lerp_tap(j, s.w(), ow);
      const Scalar fx = static_cast<Scalar>(tx.frac);
      for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c) {
          const Scalar g = gy.at(n, c, i, j);
          gx.at(n, c, ty.i0, tx.i0) += g * (1 - fy) * (1 - fx);
          gx.at(n, c, ty.i0, tx.i1) += g * (1 - fy) * fx;
          gx.at(n, c, ty.i1, tx.i0) += g * fy * (1 - fx);
          gx.at(n, c, ty.i1, tx.i1) += g * fy * fx;
        }
    }
  }
}

// 2x2 mean downsample (stride 2), used between backbone stages.
template <typename Scalar>
Tensor<Scalar> avg_pool2x2(const Tensor<Scalar>& x) {
  require_rank4(x.shape(), "avg_pool2x2");
  const Shape& s = x.shape();
  if (s.h() % 2 || s.w() % 2)
    throw InvalidArgument("avg_pool2x2 needs even spatial dims, got " + s.str());
  Tensor<Scalar> y(Shape::nchw(s.n(), s.c(), s.h() / 2, s.w() / 2));
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t i = 0; i < s.h() / 2; ++i)
        for (std::size_t j = 0; j < s.w() / 2; ++j)
          y.at(n, c, i, j) = Scalar(0.25) * (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i, 2 * j + 1) +
                                             x.at(n, c, 2 * i + 1, 2 * j) + x.at(n, c, 2 * i + 1, 2 * j + 1));
  return y;
}

template <typename Scalar>
void avg_pool2x2_backward(const Tensor<Scalar>& gy, Tensor<Scalar>& gx) {
  const Shape& s = gx.shape();
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t i = 0; i < s.h(); ++i)
        for (std::size_t j = 0; j < s.w(); ++j) gx.at(n, c, i, j) += Scalar(0.25) * gy.at(n, c, i / 2, j / 2);
}

// y = x W^T + b for x [n, d_in], W [d_out, d_in], b [d_out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& W, const Tensor<Scalar>& b) {
  if (x.rank() != 2 || W.rank() != 2)
    throw InvalidArgument("linear expects rank-2 input and weight, got " + x.shape().str() + " and " +
                          W.shape().str());
  const std::size_t N = x.shape().n(), IN = x.shape().d(), OUT = W.shape().n();
  if (W.shape().d() != IN)
    throw InvalidArgument("linear dimension mismatch: input " + x.shape().str() + " vs weight " +
                          W.shape().str());
  if (b.size() != OUT)
    throw InvalidArgument("linear bias " + b.shape().str() + " does not match weight " + W.shape().str());
  Tensor<Scalar> y(Shape::nd(N, OUT));
  for (std::size_t n = 0; n < N; ++n) {
    const Scalar* xr = x.ptr() + n * IN;
    for (std::size_t o = 0; o < OUT; ++o) {
      const Scalar* wr = W.ptr() + o * IN;
      Scalar acc = b[o];
      for (std::size_t i = 0; i < IN; ++i) acc += xr[i] * wr[i];
      y.at(n, o) = acc;
    }
  }
  return y;
}

template <typename Scalar>
void linear_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& W, const Tensor<Scalar>& gy,
                     Tensor<Scalar>* gx, Tensor<Scalar>* gW, Tensor<Scalar>* gb) {
  const std::size_t N = x.shape().n(), IN = x.shape().d(), OUT = W.shape().n();
  for (std::size_t n = 0; n < N; ++n) {
    const Scalar* xr = x.ptr() + n * IN;
    for (std::size_t o = 0; o < OUT; ++o) {
      const Scalar g = gy.at(n, o);
      if (g == Scalar(0)) continue;
      if (gb) (*gb)[o] += g;
      const Scalar* wr = W.ptr() + o * IN;
      if (gW) {
        Scalar* gwr = gW->ptr() + o * IN;
        for (std::size_t i = 0; i < IN; ++i) gwr[i] += g * xr[i];
      }
      if (gx) {
        Scalar* gxr = gx->ptr() + n * IN;
        for (std::size_t i = 0; i < IN; ++i) gxr[i] += g * wr[i];
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : Scalar(0);
  return y;
}

template <typename Scalar>
Scalar logistic(Scalar v) {
  // Branches keep exp() from overflowing for large |v|.
  if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = logistic(x[i]);
  return y;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw InvalidArgument(std::string(op) + " shape mismatch: " + a.str() + " vs " + b.str());
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
  require_same_shape(x.shape(), y.shape(), "add");
  Tensor<Scalar> z(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
  return z;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
  require_rank4(x.shape(), "concat_channels");
  require_rank4(y.shape(), "concat_channels");
  const Shape& a = x.shape();
  const Shape& b = y.shape();
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw InvalidArgument("concat_channels shape mismatch: " + a.str() + " vs " + b.str());
  Tensor<Scalar> z(Shape::nchw(a.n(), a.c() + b.c(), a.h(), a.w()));
  const std::size_t plane = a.h() * a.w();
  for (std::size_t n = 0; n < a.n(); ++n) {
    std::copy_n(&x.at(n, 0, 0, 0), a.c() * plane, &z.at(n, 0, 0, 0));
    std::copy_n(&y.at(n, 0, 0, 0), b.c() * plane, &z.at(n, a.c(), 0, 0));
  }
  return z;
}

inline void check_scale_channels(const Shape& x, const Shape& alpha) {
  require_rank4(x, "scale_channels");
  if (alpha.rank != 2 || alpha.n() != x.n() || alpha.d() != x.c())
    throw InvalidArgument("scale_channels gate " + alpha.str() + " does not match features " + x.str());
}

template <typename Scalar>
Tensor<Scalar> scale_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& alpha) {
  check_scale_channels(x.shape(), alpha.shape());
  const Shape& s = x.shape();
  const std::size_t plane = s.h() * s.w();
  Tensor<Scalar> y(s);
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c) {
      const Scalar a = alpha.at(n, c);
      const Scalar* xp = &x.at(n, c, 0, 0);
      Scalar* yp = &y.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) yp[i] = a * xp[i];
    }
  return y;
}

}  // namespace kernels
}  // namespace sasp
