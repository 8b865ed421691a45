#pragma once

// Classification head: GAP -> linear/relu/dropout -> linear/relu/dropout -> linear.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sasp/autograd.hpp"

namespace sasp {

template <typename Scalar>
struct HeadParams {
  std::size_t channels = 0, hidden1 = 0, hidden2 = 0, classes = 0;
  double dropout_rate = 0.5;
  Param<Scalar> w1, b1, w2, b2, w3, b3;

  HeadParams(std::size_t c, std::size_t d1, std::size_t d2, std::size_t k, double dropout)
      : channels(c), hidden1(d1), hidden2(d2), classes(k), dropout_rate(dropout) {
    if (c == 0 || d1 == 0 || d2 == 0 || k == 0) throw ConfigError("head dimensions must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout rate must lie in [0, 1)");
    w1 = Param<Scalar>("head.w1", Shape::nd(d1, c), true);
    b1 = Param<Scalar>("head.b1", Shape::nd(1, d1), false);
    w2 = Param<Scalar>("head.w2", Shape::nd(d2, d1), true);
    b2 = Param<Scalar>("head.b2", Shape::nd(1, d2), false);
    w3 = Param<Scalar>("head.w3", Shape::nd(k, d2), true);
    b3 = Param<Scalar>("head.b3", Shape::nd(1, k), false);
  }

  std::vector<Param<Scalar>*> params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

  void init(Rng& rng) {
    kaiming_uniform(w1.value, rng, channels);
    kaiming_uniform(w2.value, rng, hidden1);
    // Final projection uses unit gain.
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden2));
    fill_uniform(w3.value, rng, -bound, bound);
    for (Param<Scalar>* b : {&b1, &b2, &b3}) b->value.fill(Scalar(0));
  }
};

// `rng` is only consulted when training with a nonzero dropout rate.
template <typename Scalar>
Var<Scalar> head_forward(Var<Scalar> f, HeadParams<Scalar>& p, bool training, Rng* rng) {
  const Shape& s = f.shape();
  if (s.rank != 4 || s.c() != p.channels)
    throw InvalidArgument("head configured for " + std::to_string(p.channels) + " channels, got input " + s.str());
  const bool drop = training && p.dropout_rate > 0;
  if (drop && !rng) throw InvalidArgument("training-mode dropout needs a random generator");
  Var<Scalar> x = flatten(adaptive_avg_pool(f, 1, 1));
  x = relu(linear(x, p.w1, p.b1));
  if (drop) x = dropout(x, p.dropout_rate, *rng);
  x = relu(linear(x, p.w2, p.b2));
  if (drop) x = dropout(x, p.dropout_rate, *rng);
  return linear(x, p.w3, p.b3);
}

// Row-wise argmax; ties go to the lowest class index.
template <typename Scalar>
std::vector<std::size_t> predict(const Tensor<Scalar>& logits) {
  const std::size_t N = logits.shape().n(), K = logits.shape().d();
  std::vector<std::size_t> out(N, 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 1; k < K; ++k)
      if (logits.at(n, k) > logits.at(n, out[n])) out[n] = k;
  return out;
}

}  // namespace sasp
