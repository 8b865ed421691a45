#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sasp/head.hpp"
#include "sasp/model.hpp"
#include "sasp/optim.hpp"
#include "sasp/train.hpp"
#include "support/fixtures.hpp"

namespace sasp {
namespace {

using testing::random_tensor;

TEST(HeadTest, ZeroWeightsEmitFinalBias) {
  HeadParams<double> p(4, 3, 2, 5, 0.5);
  const std::vector<double> t{0.5, -1, 2, 0, 3.25};
  p.b3.value = Tensor<double>(Shape::nd(1, 5), t);
  p.b1.value.fill(1);
  Rng rng(1);
  Tape<double> tape;
  auto z = head_forward(tape.constant(random_tensor<double>(Shape::nchw(3, 4, 2, 2), rng)), p, true, &rng);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(z.value().at(n, k), t[k]);
}

TEST(HeadTest, PooledDescriptorOfConstantMap) {
  Tensor<double> f(Shape::nchw(1, 3, 4, 5));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) f.at(0, c, i, j) = 1.5 * double(c) + 0.1;
  const auto v = kernels::adaptive_avg_pool(f, 1, 1);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(v.at(0, c, 0, 0), 1.5 * double(c) + 0.1);
}

TEST(HeadTest, EvalModeIsDeterministic) {
  HeadParams<float> p(8, 6, 5, 3, 0.5);
  Rng rng(2);
  p.init(rng);
  const auto f = random_tensor<float>(Shape::nchw(2, 8, 3, 3), rng);
  Tape<float> a, b;
  Rng r1(10), r2(99);
  EXPECT_EQ(head_forward(a.constant(f), p, false, &r1).value().vec(),
            head_forward(b.constant(f), p, false, &r2).value().vec());
}

TEST(HeadTest, TrainingDropoutNeedsGenerator) {
  HeadParams<float> p(8, 6, 5, 3, 0.5);
  Tape<float> tape;
  EXPECT_THROW(head_forward(tape.constant(Tensor<float>(Shape::nchw(1, 8, 1, 1))), p, true, nullptr),
               InvalidArgument);
  EXPECT_THROW(HeadParams<float>(8, 6, 5, 3, 1.0), ConfigError);
}

TEST(HeadTest, PredictBreaksTiesTowardLowestIndex) {
  const Tensor<double> z(Shape::nd(3, 4), {1, 3, 3, 0, 2, 2, 2, 2, -1, -5, 0, 0});
  EXPECT_EQ(predict(z), (std::vector<std::size_t>{1, 0, 2}));
}

TEST(HeadTest, ArgmaxIgnoresCommonShift) {
  Rng rng(3);
  const auto z = random_tensor<double>(Shape::nd(6, 7), rng, -4, 4);
  Tensor<double> shifted = z;
  for (double& v : shifted.data()) v += 123.5;
  EXPECT_EQ(predict(z), predict(shifted));
}

double ce(const Tensor<double>& z, const std::vector<std::size_t>& labels) {
  Tape<double> tape;
  return cross_entropy(tape.constant(z), std::span<const std::size_t>(labels)).value()[0];
}

TEST(LossTest, UniformLogitsGiveLogK) {
  for (std::size_t k : {2u, 10u, 200u}) {
    const Tensor<double> z(Shape::nd(3, k), 0.7);
    EXPECT_NEAR(ce(z, {0, k - 1, k / 2}), std::log(double(k)), 1e-6) << k;
  }
  EXPECT_NEAR(ce(Tensor<double>(Shape::nd(1, 200)), {0}), 5.298317366548036, 1e-12);
}

TEST(LossTest, ConfidentCorrectLogitIsNearlyFree) {
  Tensor<double> z(Shape::nd(2, 5));
  z.at(0, 3) = 1000;
  z.at(1, 0) = 1000;
  const double l = ce(z, {3, 0});
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-6);
}

TEST(LossTest, SoftmaxRowsSumToOneAndLossNonNegative) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = random_tensor<double>(Shape::nd(4, 9), rng, -50, 50);
    const auto p = softmax(z);
    for (std::size_t n = 0; n < 4; ++n) {
      double s = 0;
      for (std::size_t k = 0; k < 9; ++k) s += p.at(n, k);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    EXPECT_GE(ce(z, {0, 3, 8, 4}), 0.0);
  }
}

TEST(LossTest, LabelOutOfRangeRejected) {
  EXPECT_THROW(ce(Tensor<double>(Shape::nd(1, 3)), {3}), InvalidArgument);
  EXPECT_THROW(ce(Tensor<double>(Shape::nd(2, 3)), {0}), InvalidArgument);
}

TEST(ScheduleTest, EndpointsAndMidpoint) {
  const TrainConfig cfg;
  EXPECT_EQ(schedule(0, 1000, cfg), 0.1);
  EXPECT_EQ(schedule(1000, 1000, cfg), 0.01);
  EXPECT_EQ(schedule(5000, 1000, cfg), 0.01);
  // 0.09 * sqrt(1/2) + 0.01
  EXPECT_NEAR(schedule(500, 1000, cfg), 0.07363961030678928, 1e-15);
  double prev = 1;
  for (std::size_t s = 0; s <= 1000; ++s) {
    const double lr = schedule(s, 1000, cfg);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(ConfigTest, TrainConfigValidation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lr_final = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.decay_power = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

void unit_grad(Param<double>& p) { p.accumulate_grad(Tensor<double>(p.value.shape(), 1.0)); }

TEST(OptimizerTest, TwoStepMomentumHandExample) {
  Param<double> w("w", Shape::nd(1, 1), true);
  w.value[0] = 1;
  TrainConfig cfg;
  cfg.weight_decay = 0;
  cfg.momentum = 0.9;
  std::vector<Param<double>*> ps{&w};
  unit_grad(w);
  sgd_momentum_step<double>(ps, 0.1, cfg);
  EXPECT_NEAR(w.value[0], 0.9, 1e-12);
  unit_grad(w);
  sgd_momentum_step<double>(ps, 0.1, cfg);
  EXPECT_NEAR(w.value[0], 0.71, 1e-12);
}

TEST(OptimizerTest, WeightDecayOnlyStep) {
  Param<double> w("w", Shape::nd(1, 3), true), b("b", Shape::nd(1, 3), false);
  w.value = Tensor<double>(Shape::nd(1, 3), {2.0, -0.5, 7.0});
  b.value = w.value;
  TrainConfig cfg;
  cfg.weight_decay = 1e-4;
  w.accumulate_grad(Tensor<double>(Shape::nd(1, 3)));
  b.accumulate_grad(Tensor<double>(Shape::nd(1, 3)));
  std::vector<Param<double>*> ps{&w, &b};
  sgd_momentum_step<double>(ps, 0.1, cfg);
  const std::vector<double> start{2.0, -0.5, 7.0};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(w.value[i], start[i] * (1 - 0.1 * 1e-4), 1e-15);
    EXPECT_EQ(b.value[i], start[i]);
  }
}

TEST(OptimizerTest, StepBeforeBackwardIsStateError) {
  Param<double> w("w", Shape::nd(1, 1), true);
  std::vector<Param<double>*> ps{&w};
  EXPECT_THROW(sgd_momentum_step<double>(ps, 0.1, TrainConfig{}), StateError);
}

TEST(OptimizerTest, NonFiniteUpdateLeavesParamsUntouched) {
  Param<double> a("a", Shape::nd(1, 2), true), b("b", Shape::nd(1, 2), true);
  a.value.fill(1);
  b.value.fill(1);
  a.accumulate_grad(Tensor<double>(Shape::nd(1, 2), 1.0));
  b.accumulate_grad(Tensor<double>(Shape::nd(1, 2), std::numeric_limits<double>::infinity()));
  std::vector<Param<double>*> ps{&a, &b};
  EXPECT_THROW(sgd_momentum_step<double>(ps, 0.1, TrainConfig{}, 7), NumericError);
  EXPECT_EQ(a.value.vec(), (std::vector<double>{1, 1}));
  EXPECT_EQ(a.momentum.vec(), (std::vector<double>{0, 0}));
}

Dataset<float> clustered(std::size_t classes, std::size_t per_class, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<float>> means;
  for (std::size_t k = 0; k < classes; ++k) means.push_back(random_tensor<float>(Shape::nchw(1, c, 3, 3), rng, 0, 2));
  Dataset<float> d;
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      Tensor<float> x = means[k];
      for (float& v : x.data()) v += 0.1f * float(std::normal_distribution<double>(0, 1)(rng));
      d.add("c" + std::to_string(k) + "_" + std::to_string(i), k, std::move(x));
    }
  return d;
}

TrainConfig quick_train() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.lr_init = 0.05;
  cfg.lr_final = 0.005;
  cfg.epochs = 6;
  cfg.seed = 11;
  return cfg;
}

std::pair<std::string, std::string> run_once(SaspConfig mc, const Dataset<float>& d) {
  SaspModel<float> m(mc, 3);
  const TrainLog log = train(m, d, quick_train(), &d);
  std::ostringstream csv, ck;
  log.write_csv(csv);
  save_checkpoint(ck, m);
  return {csv.str(), ck.str()};
}

TEST(TrainTest, RunsAreByteIdentical) {
  auto mc = testing::precomputed_config(8, 3, 3, 3);
  mc.dropout = 0.5;
  const auto d = clustered(3, 4, 8, 5);
  const auto a = run_once(mc, d), b = run_once(mc, d);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_FALSE(a.first.empty());
}

TEST(TrainTest, LogFollowsScheduleExactly) {
  auto mc = testing::precomputed_config(8, 3, 3, 3);
  const auto d = clustered(3, 3, 8, 6);
  SaspModel<float> m(mc, 1);
  const TrainConfig cfg = quick_train();
  const TrainLog log = train(m, d, cfg);
  const std::size_t total = 3 * cfg.epochs;
  ASSERT_EQ(log.steps.size(), total);
  for (std::size_t i = 0; i < total; ++i) {
    EXPECT_EQ(log.steps[i].step, i);
    EXPECT_EQ(log.steps[i].lr, schedule(i, total, cfg));
  }
  EXPECT_EQ(log.epochs.size(), cfg.epochs);
  std::ostringstream os;
  log.write_csv(os);
  std::istringstream in(os.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,step,lr,loss,train_acc,eval_acc");
  const auto lr_begin = row.find(',', row.find(',') + 1) + 1;
  EXPECT_EQ(std::stod(row.substr(lr_begin, row.find(',', lr_begin) - lr_begin)), schedule(0, total, cfg));
}

TEST(TrainTest, ZeroDropoutMakesTrainAndEvalForwardsAgree) {
  auto mc = testing::precomputed_config(8, 3, 3, 3);
  SaspModel<double> m(mc, 2);
  Rng rng(7);
  const auto x = random_tensor<double>(Shape::nchw(2, 8, 3, 3), rng);
  Tape<double> a, b;
  EXPECT_EQ(m.forward(a.constant(x), true, &rng).logits.value().vec(),
            m.forward(b.constant(x), false, nullptr).logits.value().vec());
}

TEST(TrainTest, EvaluateUsesLowestIndexOnTies) {
  auto mc = testing::precomputed_config(8, 3, 3, 4);
  SaspModel<float> m(mc, 2);
  for (Param<float>* p : m.head().params()) p->value.fill(0);
  Dataset<float> d = clustered(4, 2, 8, 8);
  EXPECT_DOUBLE_EQ(evaluate(m, d), 0.25);
  EXPECT_THROW(evaluate(m, Dataset<float>{}), InvalidArgument);
}

TEST(TrainTest, SmoothedLossUsesDisjointBlocks) {
  TrainLog log;
  for (std::size_t i = 0; i < 25; ++i) log.steps.push_back({0, i, 0.1, double(i)});
  EXPECT_EQ(smoothed_loss(log, 10), (std::vector<double>{4.5, 14.5}));
}

TEST(TrainTest, DivergenceKeepsLastFiniteState) {
  auto mc = testing::precomputed_config(8, 3, 3, 3);
  SaspModel<float> m(mc, 4);
  const auto d = clustered(3, 4, 8, 9);
  TrainConfig cfg = quick_train();
  cfg.lr_init = cfg.lr_final = 1e30;
  Trainer<float> t(m, cfg);
  EXPECT_THROW(t.run(d), NumericError);
  for (Param<float>* p : m.params()) EXPECT_TRUE(p->value.all_finite()) << p->name;
}

TEST(CheckpointTest, RoundTripPreservesParamsAndOutputs) {
  SaspModel<float> m(testing::composite_config(), 12);
  std::stringstream ss;
  save_checkpoint(ss, m);
  const std::string bytes = ss.str();
  SaspModel<float> back = load_checkpoint<float>(ss);
  auto pa = m.params(), pb = back.params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value.vec(), pb[i]->value.vec());
  }
  std::stringstream again;
  save_checkpoint(again, back);
  EXPECT_EQ(again.str(), bytes);

  std::stringstream widen(bytes);
  SaspModel<double> wide = load_checkpoint<double>(widen);
  EXPECT_EQ(static_cast<float>(wide.params().back()->value[0]), pa.back()->value[0]);
}

TEST(CheckpointTest, CorruptionIsParseError) {
  SaspModel<float> m(testing::composite_config(), 12);
  std::stringstream ss;
  save_checkpoint(ss, m);
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint<float>(cut), ParseError);
  bytes[0] = 'Z';
  std::stringstream bad(bytes);
  EXPECT_THROW(load_checkpoint<float>(bad), ParseError);
}

}  // namespace
}  // namespace sasp
