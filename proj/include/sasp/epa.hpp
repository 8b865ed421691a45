#pragma once

// Extensional perception aggregator: five parallel branches over F,
//   loc: conv3x3(F)
//   h:   up(conv3x3(pool_{H'x1}(F)))      row strips
//   v:   up(conv3x3(pool_{1xW'}(F)))      column strips
//   sh:  up(conv1x3(pool_{1xW'}(F')))     F' = conv1x1(F), C/4 channels
//   sv:  up(conv3x1(pool_{H'x1}(F')))
// fused as relu(F + conv1x1([relu(loc+h+v), relu(sh+sv)])).

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sasp/autograd.hpp"

namespace sasp {

template <typename Scalar>
struct EpaParams {
  std::size_t channels = 0;
  Param<Scalar> k_loc, b_loc;
  Param<Scalar> k_h, b_h;
  Param<Scalar> k_v, b_v;
  Param<Scalar> k_reduce, b_reduce;
  Param<Scalar> k_sh, b_sh;
  Param<Scalar> k_sv, b_sv;
  Param<Scalar> k_proj, b_proj;

  explicit EpaParams(std::size_t c) : channels(c) {
    if (c == 0 || c % 4 != 0)
      throw ConfigError("EPA channel count must be a positive multiple of 4, got " + std::to_string(c));
    const std::size_t r = c / 4;
    k_loc = Param<Scalar>("epa.loc.kernel", Shape::nchw(c, c, 3, 3), true);
    b_loc = Param<Scalar>("epa.loc.bias", Shape::nd(1, c), false);
    k_h = Param<Scalar>("epa.h.kernel", Shape::nchw(c, c, 3, 3), true);
    b_h = Param<Scalar>("epa.h.bias", Shape::nd(1, c), false);
    k_v = Param<Scalar>("epa.v.kernel", Shape::nchw(c, c, 3, 3), true);
    b_v = Param<Scalar>("epa.v.bias", Shape::nd(1, c), false);
    k_reduce = Param<Scalar>("epa.reduce.kernel", Shape::nchw(r, c, 1, 1), true);
    b_reduce = Param<Scalar>("epa.reduce.bias", Shape::nd(1, r), false);
    k_sh = Param<Scalar>("epa.sh.kernel", Shape::nchw(r, r, 1, 3), true);
    b_sh = Param<Scalar>("epa.sh.bias", Shape::nd(1, r), false);
    k_sv = Param<Scalar>("epa.sv.kernel", Shape::nchw(r, r, 3, 1), true);
    b_sv = Param<Scalar>("epa.sv.bias", Shape::nd(1, r), false);
    k_proj = Param<Scalar>("epa.proj.kernel", Shape::nchw(c, c + r, 1, 1), true);
    b_proj = Param<Scalar>("epa.proj.bias", Shape::nd(1, c), false);
  }

  std::size_t reduced() const { return channels / 4; }

  std::vector<Param<Scalar>*> params() {
    return {&k_loc, &b_loc, &k_h, &b_h, &k_v, &b_v, &k_reduce, &b_reduce,
            &k_sh, &b_sh, &k_sv, &b_sv, &k_proj, &b_proj};
  }

  void init(Rng& rng) {
    for (Param<Scalar>* p : params()) {
      if (p->decay) {
        const Shape& s = p->value.shape();
        kaiming_uniform(p->value, rng, s.c() * s.h() * s.w());
      } else {
        p->value.fill(Scalar(0));
      }
    }
  }

  void zero() {
    for (Param<Scalar>* p : params()) p->value.fill(Scalar(0));
  }
};

inline constexpr Padding kPad3x3{1, 1};
inline constexpr Padding kPad1x3{0, 1};
inline constexpr Padding kPad3x1{1, 0};
inline constexpr Padding kPad1x1{0, 0};

inline void check_epa_input(const Shape& s, std::size_t channels) {
  if (s.rank != 4 || s.c() != channels)
    throw InvalidArgument("EPA configured for " + std::to_string(channels) + " channels, got input " + s.str());
}

template <typename Scalar>
Var<Scalar> epa_forward(Var<Scalar> f, EpaParams<Scalar>& p) {
  check_epa_input(f.shape(), p.channels);
  const std::size_t H = f.shape().h(), W = f.shape().w();

  Var<Scalar> loc = conv2d(f, p.k_loc, p.b_loc, kPad3x3);
  Var<Scalar> h = bilinear_upsample(conv2d(adaptive_avg_pool(f, H, 1), p.k_h, p.b_h, kPad3x3), H, W);
  Var<Scalar> v = bilinear_upsample(conv2d(adaptive_avg_pool(f, 1, W), p.k_v, p.b_v, kPad3x3), H, W);

  Var<Scalar> reduced = conv2d(f, p.k_reduce, p.b_reduce, kPad1x1);
  Var<Scalar> sh = bilinear_upsample(conv2d(adaptive_avg_pool(reduced, 1, W), p.k_sh, p.b_sh, kPad1x3), H, W);
  Var<Scalar> sv = bilinear_upsample(conv2d(adaptive_avg_pool(reduced, H, 1), p.k_sv, p.b_sv, kPad3x1), H, W);

  Var<Scalar> fused1 = relu(add(add(loc, h), v));
  Var<Scalar> fused2 = relu(add(sh, sv));
  Var<Scalar> projected = conv2d(concat_channels(fused1, fused2), p.k_proj, p.b_proj, kPad1x1);
  return relu(add(f, projected));
}

// Intermediate branch outputs for inspection; computed without a tape.
template <typename Scalar>
struct EpaResponses {
  Tensor<Scalar> loc, h, v, sh, sv, fused1, fused2;
  Tensor<Scalar> output;

  std::array<std::pair<std::string_view, const Tensor<Scalar>*>, 7> named() const {
    return {{{"loc", &loc}, {"h", &h}, {"v", &v}, {"sh", &sh}, {"sv", &sv}, {"fused1", &fused1}, {"fused2", &fused2}}};
  }
};

template <typename Scalar>
EpaResponses<Scalar> epa_branch_responses(const Tensor<Scalar>& f, const EpaParams<Scalar>& p) {
  namespace k = kernels;
  check_epa_input(f.shape(), p.channels);
  const std::size_t H = f.shape().h(), W = f.shape().w();
  auto conv = [](const Tensor<Scalar>& x, const Param<Scalar>& kern, const Param<Scalar>& bias, Padding pad) {
    return k::conv2d(x, kern.value, bias.value, pad);
  };
  EpaResponses<Scalar> r;
  r.loc = conv(f, p.k_loc, p.b_loc, kPad3x3);
  r.h = k::bilinear_upsample(conv(k::adaptive_avg_pool(f, H, 1), p.k_h, p.b_h, kPad3x3), H, W);
  r.v = k::bilinear_upsample(conv(k::adaptive_avg_pool(f, 1, W), p.k_v, p.b_v, kPad3x3), H, W);
  const Tensor<Scalar> reduced = conv(f, p.k_reduce, p.b_reduce, kPad1x1);
  r.sh = k::bilinear_upsample(conv(k::adaptive_avg_pool(reduced, 1, W), p.k_sh, p.b_sh, kPad1x3), H, W);
  r.sv = k::bilinear_upsample(conv(k::adaptive_avg_pool(reduced, H, 1), p.k_sv, p.b_sv, kPad3x1), H, W);
  r.fused1 = k::relu(k::add(k::add(r.loc, r.h), r.v));
  r.fused2 = k::relu(k::add(r.sh, r.sv));
  r.output = k::relu(k::add(f, conv(k::concat_channels(r.fused1, r.fused2), p.k_proj, p.b_proj, kPad1x1)));
  return r;
}

}  // namespace sasp
