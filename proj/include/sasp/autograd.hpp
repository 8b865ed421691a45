#pragma once

// Reverse-mode differentiation over a linear tape. Every op appends one node
// holding its output value and a closure that pushes the output gradient back
// to its inputs; Tape::backward replays the closures in reverse order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sasp/errors.hpp"
#include "sasp/kernels.hpp"
#include "sasp/random.hpp"
#include "sasp/tensor.hpp"

namespace sasp {

// A learnable tensor with its gradient accumulator and momentum buffer.
template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> momentum;
  bool decay = true;  // weight decay applies (weights yes, biases no)
  bool grad_ready = false;

  Param() = default;
  Param(std::string name_, Shape shape, bool decay_)
      : name(std::move(name_)), value(shape), grad(shape), momentum(shape), decay(decay_) {}

  void accumulate_grad(const Tensor<Scalar>& g) {
    kernels::require_same_shape(value.shape(), g.shape(), "accumulate_grad");
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    grad_ready = true;
  }

  void zero_grad() {
    grad.fill(Scalar(0));
    grad_ready = false;
  }
};

template <typename Scalar>
class Tape;

// Handle to a tensor recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input that never receives a gradient.
  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf that receives a gradient (readable through grad()).
  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), true, nullptr, {}); }

  // Leaf bound to a Param; backward() accumulates into Param::grad.
  Var<Scalar> param(Param<Scalar>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<Scalar>(this, it->second);
    Var<Scalar> v = push(p.value, true, &p, {});
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Appends an op output. The closure is kept only if some input needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw InvalidArgument("op inputs recorded on different tapes");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    ++op_count_;
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad.has_value(); }

  // Gradient slot for node `id`, zero-allocated on first access.
  Tensor<Scalar>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(n.value.shape());
    return *n.grad;
  }
  Tensor<Scalar>& grad(const Var<Scalar>& v) { return grad(v.id()); }

  std::size_t size() const { return nodes_.size(); }
  std::size_t op_count() const { return op_count_; }

  void backward(const Var<Scalar>& loss) {
    if (op_count_ == 0) throw StateError("backward on an empty tape");
    if (done_) throw StateError("backward already ran on this tape");
    if (loss.value().size() != 1)
      throw InvalidArgument("backward needs a scalar loss, got shape " + loss.shape().str());
    grad(loss.id()).fill(Scalar(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad) n.backward(*this, *n.grad);
    }
    for (auto& [p, id] : param_nodes_) p->accumulate_grad(grad(id));
    done_ = true;
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    std::optional<Tensor<Scalar>> grad;
    bool requires_grad = false;
    Param<Scalar>* param = nullptr;
    BackwardFn backward;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, Param<Scalar>* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, p, std::move(fn)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<Param<Scalar>*, std::size_t> param_nodes_;
  std::size_t op_count_ = 0;
  bool done_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> k, Var<Scalar> b, Padding pad) {
  auto& tape = x.tape();
  Tensor<Scalar> y = kernels::conv2d(x.value(), k.value(), b.value(), pad);
  const std::size_t xi = x.id(), ki = k.id(), bi = b.id();
  return tape.record(std::move(y), {x, k, b}, [xi, ki, bi, pad](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    kernels::conv2d_backward(t.value(xi), t.value(ki), gy, pad,
                             t.requires_grad(xi) ? &t.grad(xi) : nullptr,
                             t.requires_grad(ki) ? &t.grad(ki) : nullptr,
                             t.requires_grad(bi) ? &t.grad(bi) : nullptr);
  });
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Param<Scalar>& k, Param<Scalar>& b, Padding pad) {
  auto& tape = x.tape();
  return conv2d(x, tape.param(k), tape.param(b), pad);
}

template <typename Scalar>
Var<Scalar> adaptive_avg_pool(Var<Scalar> x, std::size_t out_h, std::size_t out_w) {
  Tensor<Scalar> y = kernels::adaptive_avg_pool(x.value(), out_h, out_w);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    kernels::adaptive_avg_pool_backward(gy, t.grad(xi));
  });
}

template <typename Scalar>
Var<Scalar> bilinear_upsample(Var<Scalar> x, std::size_t out_h, std::size_t out_w) {
  Tensor<Scalar> y = kernels::bilinear_upsample(x.value(), out_h, out_w);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    kernels::bilinear_upsample_backward(gy, t.grad(xi));
  });
}

template <typename Scalar>
Var<Scalar> avg_pool2x2(Var<Scalar> x) {
  Tensor<Scalar> y = kernels::avg_pool2x2(x.value());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    kernels::avg_pool2x2_backward(gy, t.grad(xi));
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Tensor<Scalar> y = kernels::relu(x.value());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    const Tensor<Scalar>& xv = t.value(xi);
    Tensor<Scalar>& gx = t.grad(xi);
    // Subgradient 0 at exactly 0.
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (xv[i] > 0) gx[i] += gy[i];
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Tensor<Scalar> y = kernels::sigmoid(x.value());
  const std::size_t xi = x.id();
  auto& tape = x.tape();
  const std::size_t yi = tape.size();
  return tape.record(std::move(y), {x}, [xi, yi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    const Tensor<Scalar>& yv = t.value(yi);
    Tensor<Scalar>& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * yv[i] * (1 - yv[i]);
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> x, Var<Scalar> y) {
  Tensor<Scalar> z = kernels::add(x.value(), y.value());
  const std::size_t xi = x.id(), yi = y.id();
  return x.tape().record(std::move(z), {x, y}, [xi, yi](Tape<Scalar>& t, const Tensor<Scalar>& gz) {
    for (std::size_t id : {xi, yi}) {
      if (!t.requires_grad(id)) continue;
      Tensor<Scalar>& g = t.grad(id);
      for (std::size_t i = 0; i < gz.size(); ++i) g[i] += gz[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> x, Var<Scalar> y) {
  Tensor<Scalar> z = kernels::concat_channels(x.value(), y.value());
  const std::size_t xi = x.id(), yi = y.id();
  return x.tape().record(std::move(z), {x, y}, [xi, yi](Tape<Scalar>& t, const Tensor<Scalar>& gz) {
    const Shape& a = t.value(xi).shape();
    const Shape& b = t.value(yi).shape();
    const std::size_t plane = a.h() * a.w();
    for (std::size_t n = 0; n < a.n(); ++n) {
      const Scalar* src = &gz.at(n, 0, 0, 0);
      if (t.requires_grad(xi)) {
        Scalar* dst = &t.grad(xi).at(n, 0, 0, 0);
        for (std::size_t i = 0; i < a.c() * plane; ++i) dst[i] += src[i];
      }
      if (t.requires_grad(yi)) {
        Scalar* dst = &t.grad(yi).at(n, 0, 0, 0);
        src += a.c() * plane;
        for (std::size_t i = 0; i < b.c() * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

// x[n,c,:,:] * alpha[n,c], broadcast over the spatial axes.
template <typename Scalar>
Var<Scalar> scale_channels(Var<Scalar> x, Var<Scalar> alpha) {
  Tensor<Scalar> y = kernels::scale_channels(x.value(), alpha.value());
  const std::size_t xi = x.id(), ai = alpha.id();
  return x.tape().record(std::move(y), {x, alpha}, [xi, ai](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    const Tensor<Scalar>& xv = t.value(xi);
    const Tensor<Scalar>& av = t.value(ai);
    const Shape& s = xv.shape();
    const std::size_t plane = s.h() * s.w();
    const bool need_x = t.requires_grad(xi), need_a = t.requires_grad(ai);
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t c = 0; c < s.c(); ++c) {
        const Scalar* g = &gy.at(n, c, 0, 0);
        const Scalar* xp = &xv.at(n, c, 0, 0);
        if (need_x) {
          Scalar* gx = &t.grad(xi).at(n, c, 0, 0);
          const Scalar a = av.at(n, c);
          for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i] * a;
        }
        if (need_a) {
          Scalar acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[i] * xp[i];
          t.grad(ai).at(n, c) += acc;
        }
      }
  });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> W, Var<Scalar> b) {
  Tensor<Scalar> y = kernels::linear(x.value(), W.value(), b.value());
  const std::size_t xi = x.id(), wi = W.id(), bi = b.id();
  return x.tape().record(std::move(y), {x, W, b}, [xi, wi, bi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    kernels::linear_backward(t.value(xi), t.value(wi), gy,
                             t.requires_grad(xi) ? &t.grad(xi) : nullptr,
                             t.requires_grad(wi) ? &t.grad(wi) : nullptr,
                             t.requires_grad(bi) ? &t.grad(bi) : nullptr);
  });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Param<Scalar>& W, Param<Scalar>& b) {
  auto& tape = x.tape();
  return linear(x, tape.param(W), tape.param(b));
}

// [n, c, h, w] -> [n, c*h*w]
template <typename Scalar>
Var<Scalar> flatten(Var<Scalar> x) {
  const Shape& s = x.shape();
  Tensor<Scalar> y = x.value().reshaped(Shape::nd(s.n(), s.size() / s.n()));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
    Tensor<Scalar>& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

// Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, double rate, Rng& rng) {
  if (rate < 0 || rate >= 1) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (rate == 0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  std::vector<Scalar> mask(x.value().size());
  for (auto& m : mask) m = keep(rng) ? scale : Scalar(0);
  Tensor<Scalar> y(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) y[i] = x.value()[i] * mask[i];
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), {x},
                         [xi, mask = std::move(mask)](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
                           Tensor<Scalar>& gx = t.grad(xi);
                           for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
                         });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Scalar acc = 0;
  for (Scalar v : x.value().data()) acc += v;
  const std::size_t xi = x.id();
  return x.tape().record(Tensor<Scalar>(Shape::nd(1, 1), acc), {x},
                         [xi](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
                           Tensor<Scalar>& gx = t.grad(xi);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0];
                         });
}

// Row-wise softmax with the max shift.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw InvalidArgument("softmax expects [n, k] logits, got " + logits.shape().str());
  const std::size_t N = logits.shape().n(), K = logits.shape().d();
  Tensor<Scalar> p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    Scalar mx = logits.at(n, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k));
    Scalar z = 0;
    for (std::size_t k = 0; k < K; ++k) z += (p.at(n, k) = std::exp(logits.at(n, k) - mx));
    for (std::size_t k = 0; k < K; ++k) p.at(n, k) /= z;
  }
  return p;
}

// Batch mean of -log softmax(logits)[label].
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const std::size_t> labels) {
  const Tensor<Scalar>& z = logits.value();
  if (z.rank() != 2) throw InvalidArgument("cross_entropy expects [n, k] logits, got " + z.shape().str());
  const std::size_t N = z.shape().n(), K = z.shape().d();
  if (labels.size() != N)
    throw InvalidArgument("cross_entropy got " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(N) + " rows");
  for (std::size_t lab : labels)
    if (lab >= K)
      throw InvalidArgument("label " + std::to_string(lab) + " out of range for " + std::to_string(K) + " classes");
  Scalar loss = 0;
  for (std::size_t n = 0; n < N; ++n) {
    Scalar mx = z.at(n, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z.at(n, k));
    Scalar s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z.at(n, k) - mx);
    loss += mx + std::log(s) - z.at(n, labels[n]);
  }
  loss /= static_cast<Scalar>(N);
  const std::size_t zi = logits.id();
  std::vector<std::size_t> labs(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor<Scalar>(Shape::nd(1, 1), loss), {logits},
      [zi, labs = std::move(labs)](Tape<Scalar>& t, const Tensor<Scalar>& gy) {
        const Tensor<Scalar> p = softmax(t.value(zi));
        Tensor<Scalar>& gz = t.grad(zi);
        const std::size_t N = p.shape().n(), K = p.shape().d();
        const Scalar scale = gy[0] / static_cast<Scalar>(N);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k)
            gz.at(n, k) += scale * (p.at(n, k) - (k == labs[n] ? Scalar(1) : Scalar(0)));
      });
}

}  // namespace sasp
