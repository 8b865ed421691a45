#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "sasp/model.hpp"
#include "support/oracles.hpp"

namespace sasp::testing {

// Tiny end-to-end model whose backbone emits F of shape (2, 8, 4, 5).
inline SaspConfig composite_config() {
  SaspConfig cfg;
  cfg.backbone.mode = BackboneMode::kTinyCnn;
  cfg.backbone.channels = 8;
  cfg.backbone.height = 4;
  cfg.backbone.width = 5;
  cfg.backbone.stage_widths = {4};
  cfg.backbone.input_height = 16;
  cfg.backbone.input_width = 20;
  cfg.classes = 3;
  cfg.csw_reduction = 4;
  cfg.head_hidden1 = 6;
  cfg.head_hidden2 = 5;
  cfg.dropout = 0.5;
  return cfg;
}

inline SaspConfig precomputed_config(std::size_t channels, std::size_t h, std::size_t w, std::size_t classes) {
  SaspConfig cfg;
  cfg.backbone.mode = BackboneMode::kPrecomputed;
  cfg.backbone.channels = channels;
  cfg.backbone.height = h;
  cfg.backbone.width = w;
  cfg.classes = classes;
  cfg.csw_reduction = 4;
  cfg.head_hidden1 = 6;
  cfg.head_hidden2 = 5;
  cfg.dropout = 0.0;
  return cfg;
}

// Random linear functional of y, so output elements get distinct upstream gradients.
inline Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  Rng r(seed);
  auto& t = y.tape();
  Var<double> flat = flatten(y);
  Tensor<double> w = random_tensor<double>(Shape::nd(1, flat.shape().d()), r);
  return sum(linear(flat, t.constant(w), t.constant(Tensor<double>(Shape::nd(1, 1)))));
}

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

// Finite-difference checks of every differentiable op on randomized shapes,
// including non-square spatial extents.
inline std::vector<NamedCheck> op_gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  auto rnd4 = [&](std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return random_tensor<double>(Shape::nchw(n, c, h, w), rng);
  };
  auto rnd2 = [&](std::size_t n, std::size_t d) { return random_tensor<double>(Shape::nd(n, d), rng); };
  std::vector<NamedCheck> out;
  auto run = [&](std::string name, std::vector<std::pair<std::string, Tensor<double>>> in, LossBuilder f) {
    out.push_back({std::move(name), check_gradients(std::move(in), {}, f)});
  };

  struct ConvCase {
    std::size_t kh, kw, ph, pw, h, w;
  };
  for (ConvCase c : {ConvCase{3, 3, 1, 1, 4, 5}, ConvCase{1, 3, 0, 1, 3, 6}, ConvCase{3, 1, 1, 0, 5, 2},
                     ConvCase{1, 1, 0, 0, 2, 3}, ConvCase{3, 3, 1, 1, 4, 1}}) {
    run("conv2d " + std::to_string(c.kh) + "x" + std::to_string(c.kw) + " on " + std::to_string(c.h) + "x" + std::to_string(c.w),
        {{"x", rnd4(2, 3, c.h, c.w)}, {"kernel", rnd4(2, 3, c.kh, c.kw)}, {"bias", rnd2(1, 2)}},
        [c](Tape<double>&, std::span<const Var<double>> v) {
          return weighted_sum(conv2d(v[0], v[1], v[2], Padding{c.ph, c.pw}), 11);
        });
  }
  for (auto [oh, ow, name] : {std::tuple<std::size_t, std::size_t, const char*>{4, 1, "rows"}, {1, 5, "cols"}, {1, 1, "global"}})
    run(std::string("adaptive_avg_pool ") + name, {{"x", rnd4(2, 3, 4, 5)}},
        [oh = oh, ow = ow](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(adaptive_avg_pool(v[0], oh, ow), 12); });
  for (auto [h, w, oh, ow] : {std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>{2, 3, 5, 7}, {4, 1, 4, 5}, {1, 5, 4, 5}, {3, 3, 3, 3}})
    run("bilinear_upsample " + std::to_string(h) + "x" + std::to_string(w) + "->" + std::to_string(oh) + "x" + std::to_string(ow),
        {{"x", rnd4(2, 2, h, w)}},
        [oh = oh, ow = ow](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(bilinear_upsample(v[0], oh, ow), 13); });
  run("avg_pool2x2", {{"x", rnd4(2, 2, 4, 6)}},
      [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(avg_pool2x2(v[0]), 14); });
  {
    // Keep inputs away from the kink so the central difference is exact.
    Tensor<double> x = rnd4(2, 3, 3, 4);
    for (auto& e : x.data())
      if (std::abs(e) < 0.05) e += 0.1;
    run("relu", {{"x", x}}, [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(relu(v[0]), 15); });
  }
  run("sigmoid", {{"x", rnd4(2, 3, 3, 4)}}, [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(sigmoid(v[0]), 16); });
  run("add", {{"x", rnd4(2, 3, 2, 5)}, {"y", rnd4(2, 3, 2, 5)}},
      [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(add(v[0], v[1]), 17); });
  run("concat_channels", {{"x", rnd4(2, 3, 2, 5)}, {"y", rnd4(2, 1, 2, 5)}},
      [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(concat_channels(v[0], v[1]), 18); });
  run("scale_channels", {{"x", rnd4(2, 3, 4, 2)}, {"alpha", rnd2(2, 3)}},
      [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(scale_channels(v[0], v[1]), 19); });
  run("linear", {{"x", rnd2(3, 4)}, {"W", rnd2(5, 4)}, {"b", rnd2(1, 5)}},
      [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(linear(v[0], v[1], v[2]), 20); });
  run("flatten", {{"x", rnd4(2, 3, 2, 2)}},
      [](Tape<double>&, std::span<const Var<double>> v) { return weighted_sum(flatten(v[0]), 21); });
  run("dropout", {{"x", rnd2(3, 8)}}, [](Tape<double>&, std::span<const Var<double>> v) {
    Rng r(22);  // same mask on every evaluation
    return weighted_sum(dropout(v[0], 0.5, r), 23);
  });
  run("sum", {{"x", rnd4(1, 2, 3, 4)}}, [](Tape<double>&, std::span<const Var<double>> v) { return sum(v[0]); });
  run("cross_entropy", {{"logits", rnd2(4, 5)}}, [](Tape<double>&, std::span<const Var<double>> v) {
    const std::vector<std::size_t> labels{0, 3, 4, 1};
    return cross_entropy(v[0], std::span<const std::size_t>(labels));
  });
  return out;
}

// Full tiny-cnn -> EPA -> CSW -> head -> cross-entropy graph on F of shape (2, 8, 4, 5),
// with a dropout mask held fixed across evaluations.
struct CompositeCheck {
  GradCheckResult result;
  Shape features;
};

inline CompositeCheck composite_gradient_check(std::uint64_t seed) {
  SaspModel<double> model(composite_config(), seed);
  Rng rng(seed + 1);
  const Tensor<double> images = random_tensor<double>(Shape::nchw(2, 3, 16, 20), rng);
  const std::vector<std::size_t> labels{2, 0};
  CompositeCheck out;
  out.result = check_gradients({{"images", images}}, model.params(), [&](Tape<double>&, std::span<const Var<double>> v) {
    Rng drop(seed + 72);
    auto outs = model.forward(v[0], true, &drop);
    out.features = outs.features.shape();
    return cross_entropy(outs.logits, std::span<const std::size_t>(labels));
  });
  return out;
}

}  // namespace sasp::testing
