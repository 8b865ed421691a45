#pragma once

// Channel semantic weaving: a squeeze-excitation style gate.
//   s = GAP(F), alpha = sigmoid(W2 relu(W1 s + b1) + b2), out = alpha (.) F

#include <string>
#include <vector>

#include "sasp/autograd.hpp"

namespace sasp {

template <typename Scalar>
struct CswParams {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  Param<Scalar> w1, b1, w2, b2;

  CswParams(std::size_t c, std::size_t r) : channels(c), reduction(r) {
    if (r == 0 || c == 0 || c % r != 0)
      throw ConfigError("CSW channel count " + std::to_string(c) + " is not divisible by reduction " +
                        std::to_string(r));
    const std::size_t hidden = c / r;
    w1 = Param<Scalar>("csw.w1", Shape::nd(hidden, c), true);
    b1 = Param<Scalar>("csw.b1", Shape::nd(1, hidden), false);
    w2 = Param<Scalar>("csw.w2", Shape::nd(c, hidden), true);
    b2 = Param<Scalar>("csw.b2", Shape::nd(1, c), false);
  }

  std::vector<Param<Scalar>*> params() { return {&w1, &b1, &w2, &b2}; }

  void init(Rng& rng) {
    kaiming_uniform(w1.value, rng, channels);
    kaiming_uniform(w2.value, rng, channels / reduction);
    b1.value.fill(Scalar(0));
    b2.value.fill(Scalar(0));
  }

  void zero() {
    for (Param<Scalar>* p : params()) p->value.fill(Scalar(0));
  }
};

template <typename Scalar>
struct CswOutput {
  Var<Scalar> features;  // [n, C, H', W']
  Var<Scalar> alpha;     // [n, C]
};

template <typename Scalar>
CswOutput<Scalar> csw_forward(Var<Scalar> f, CswParams<Scalar>& p) {
  const Shape& s = f.shape();
  if (s.rank != 4 || s.c() != p.channels)
    throw InvalidArgument("CSW configured for " + std::to_string(p.channels) + " channels, got input " + s.str());
  Var<Scalar> squeezed = flatten(adaptive_avg_pool(f, 1, 1));
  Var<Scalar> hidden = relu(linear(squeezed, p.w1, p.b1));
  Var<Scalar> alpha = sigmoid(linear(hidden, p.w2, p.b2));
  return {scale_channels(f, alpha), alpha};
}

}  // namespace sasp
