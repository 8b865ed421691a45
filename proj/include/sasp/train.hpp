#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sasp/model.hpp"
#include "sasp/optim.hpp"

namespace sasp {

// In-memory labelled samples, all of one input shape.
template <typename Scalar>
struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  std::vector<Tensor<Scalar>> inputs;  // each [1, ...]

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }

  void add(std::string id, std::size_t label, Tensor<Scalar> input) {
    ids.push_back(std::move(id));
    labels.push_back(label);
    inputs.push_back(std::move(input));
  }

  Tensor<Scalar> batch(std::span<const std::size_t> idx) const {
    std::vector<const Tensor<Scalar>*> parts;
    parts.reserve(idx.size());
    for (std::size_t i : idx) parts.push_back(&inputs.at(i));
    return stack<Scalar>(parts);
  }
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_acc = 0;
  std::optional<double> eval_acc;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  // epoch,step,lr,loss,train_acc,eval_acc. Accuracy columns are filled on the
  // last step row of each epoch and left empty elsewhere.
  void write_csv(std::ostream& os) const {
    os << "epoch,step,lr,loss,train_acc,eval_acc\n";
    char buf[64];
    std::size_t e = 0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const StepRecord& s = steps[i];
      os << s.epoch << ',' << s.step << ',';
      std::snprintf(buf, sizeof buf, "%.17g", s.lr);
      os << buf << ',';
      std::snprintf(buf, sizeof buf, "%.9g", s.loss);
      os << buf << ',';
      const bool epoch_end = i + 1 == steps.size() || steps[i + 1].epoch != s.epoch;
      while (e < epochs.size() && epochs[e].epoch < s.epoch) ++e;
      if (epoch_end && e < epochs.size() && epochs[e].epoch == s.epoch) {
        std::snprintf(buf, sizeof buf, "%.6f", epochs[e].train_acc);
        os << buf << ',';
        if (epochs[e].eval_acc) {
          std::snprintf(buf, sizeof buf, "%.6f", *epochs[e].eval_acc);
          os << buf;
        }
      } else {
        os << ',';
      }
      os << '\n';
    }
  }
};

template <typename Scalar>
std::vector<std::size_t> predict_all(SaspModel<Scalar>& model, const Dataset<Scalar>& data, std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    Tape<Scalar> tape;
    auto outs = model.forward(tape.constant(data.batch(idx)), false, nullptr);
    for (std::size_t p : predict(outs.logits.value())) out.push_back(p);
  }
  return out;
}

// Argmax accuracy with dropout disabled.
template <typename Scalar>
double evaluate(SaspModel<Scalar>& model, const Dataset<Scalar>& data, std::size_t batch_size = 64) {
  if (data.empty()) throw InvalidArgument("evaluate on an empty dataset");
  const auto pred = predict_all(model, data, std::max<std::size_t>(batch_size, 1));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename Scalar>
class Trainer {
 public:
  Trainer(SaspModel<Scalar>& model, TrainConfig cfg) : model_(model), cfg_(cfg) { cfg_.validate(); }

  // Throws NumericError on a non-finite loss or update; the model then holds
  // the last finite parameters and log() the steps completed so far.
  TrainLog run(const Dataset<Scalar>& train, const Dataset<Scalar>* eval = nullptr) {
    if (train.empty()) throw InvalidArgument("training dataset is empty");
    for (std::size_t lab : train.labels)
      if (lab >= model_.config().classes)
        throw InvalidArgument("training label " + std::to_string(lab) + " exceeds model class count");
    log_ = TrainLog{};
    Rng shuffle_rng(cfg_.seed);
    Rng dropout_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t per_epoch = (train.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    const std::size_t total = per_epoch * cfg_.epochs;
    auto params = model_.params();
    for (Param<Scalar>* p : params) p->zero_grad();

    std::vector<std::size_t> order(train.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
        const std::size_t lo = b * cfg_.batch_size;
        const std::size_t hi = std::min(train.size(), lo + cfg_.batch_size);
        std::span<const std::size_t> idx(order.data() + lo, hi - lo);
        std::vector<std::size_t> labels;
        for (std::size_t i : idx) labels.push_back(train.labels[i]);

        Tape<Scalar> tape;
        auto outs = model_.forward(tape.constant(train.batch(idx)), true, &dropout_rng);
        Var<Scalar> loss = cross_entropy(outs.logits, std::span<const std::size_t>(labels));
        const double loss_value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(loss_value)) throw NumericError("non-finite loss at step " + std::to_string(step), step);
        tape.backward(loss);
        const double lr = schedule(step, total, cfg_);
        sgd_momentum_step<Scalar>(params, lr, cfg_, step);
        log_.steps.push_back({epoch, step, lr, loss_value});
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_acc = evaluate(model_, train, cfg_.batch_size);
      if (eval && !eval->empty()) rec.eval_acc = evaluate(model_, *eval, cfg_.batch_size);
      log_.epochs.push_back(rec);
    }
    return log_;
  }

  const TrainLog& log() const { return log_; }

 private:
  SaspModel<Scalar>& model_;
  TrainConfig cfg_;
  TrainLog log_;
};

template <typename Scalar>
TrainLog train(SaspModel<Scalar>& model, const Dataset<Scalar>& train_set, const TrainConfig& cfg,
               const Dataset<Scalar>* eval_set = nullptr) {
  Trainer<Scalar> t(model, cfg);
  return t.run(train_set, eval_set);
}

// Means of consecutive non-overlapping windows of `window` step losses.
inline std::vector<double> smoothed_loss(const TrainLog& log, std::size_t window = 10) {
  std::vector<double> out;
  for (std::size_t i = 0; i + window <= log.steps.size(); i += window) {
    double acc = 0;
    for (std::size_t j = i; j < i + window; ++j) acc += log.steps[j].loss;
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

}  // namespace sasp
