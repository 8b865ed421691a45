#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sasp/tensor.hpp"

namespace sasp {

using Rng = std::mt19937_64;

template <typename Scalar>
void fill_uniform(Tensor<Scalar>& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
void fill_normal(Tensor<Scalar>& t, Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
}

// Kaiming-uniform over fan-in (ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename Scalar>
void kaiming_uniform(Tensor<Scalar>& t, Rng& rng, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  fill_uniform(t, rng, -bound, bound);
}

}  // namespace sasp
