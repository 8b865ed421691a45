#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sasp/autograd.hpp"

namespace sasp {

struct TrainConfig {
  std::size_t batch_size = 256;
  double lr_init = 0.1;
  double lr_final = 0.01;
  double decay_power = 0.5;
  std::size_t epochs = 70;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr_final > 0) || !(lr_final <= lr_init)) throw ConfigError("need 0 < lr_final <= lr_init");
    if (!(decay_power > 0)) throw ConfigError("decay_power must be positive");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  }
};

// Polynomial decay from lr_init at step 0 to lr_final at total_steps.
inline double schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0 || step >= total_steps) return cfg.lr_final;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return (cfg.lr_init - cfg.lr_final) * std::pow(1.0 - progress, cfg.decay_power) + cfg.lr_final;
}

// Heavy-ball SGD with L2 weight decay folded into the gradient:
//   g = grad + wd * w (weights only); buf = mu * buf + g; w -= lr * buf.
// The update is committed only if every new value is finite; grads are zeroed afterwards.
template <typename Scalar>
void sgd_momentum_step(std::span<Param<Scalar>* const> params, double lr, const TrainConfig& cfg,
                       std::size_t step = 0) {
  bool any_grad = false;
  for (const Param<Scalar>* p : params) any_grad = any_grad || p->grad_ready;
  if (!any_grad) throw StateError("optimizer step before any backward pass");

  std::vector<std::vector<Scalar>> next_buf(params.size()), next_val(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param<Scalar>& p = *params[k];
    const Scalar wd = p.decay ? static_cast<Scalar>(cfg.weight_decay) : Scalar(0);
    const Scalar mu = static_cast<Scalar>(cfg.momentum);
    const Scalar rate = static_cast<Scalar>(lr);
    auto& buf = next_buf[k];
    auto& val = next_val[k];
    buf.resize(p.value.size());
    val.resize(p.value.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const Scalar g = p.grad[i] + wd * p.value[i];
      buf[i] = mu * p.momentum[i] + g;
      val[i] = p.value[i] - rate * buf[i];
      if (!std::isfinite(val[i]) || !std::isfinite(buf[i]))
        throw NumericError("non-finite update for parameter " + p.name, step);
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<Scalar>& p = *params[k];
    std::copy(next_buf[k].begin(), next_buf[k].end(), p.momentum.data().begin());
    std::copy(next_val[k].begin(), next_val[k].end(), p.value.data().begin());
    p.zero_grad();
  }
}

}  // namespace sasp
