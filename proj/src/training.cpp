// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attreval/error.hpp"
#include "attreval/rng.hpp"
#include "attreval/stats.hpp"

namespace attreval {

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.epochs == 0) throw ConfigError("epochs must be at least 1");
}

void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
  if (param.shape != grad.shape || param.shape != velocity.shape) {
    throw ContractError("sgd_momentum_step: parameter " + shape_string(param.shape) + ", gradient " +
                        shape_string(grad.shape) + " and velocity " + shape_string(velocity.shape) +
                        " must share a shape");
  }
  for (std::size_t i = 0; i < param.numel(); ++i) {
    velocity.data[i] = momentum * velocity.data[i] + grad.data[i];
    param.data[i] -= lr * velocity.data[i];
  }
}

std::size_t select_best_epoch(std::span<const double> val_losses) {
  if (val_losses.empty()) throw ContractError("select_best_epoch: no epochs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i) {
    if (val_losses[i] < val_losses[best]) best = i;
  }
  return best;
}

Tensor stack_images(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("stack_images: empty batch");
  const Shape& s = samples[indices[0]].image.shape;
  if (s.size() != 3) throw ShapeError("sample image must be [C,H,W], got " + shape_string(s));
  Tensor batch({indices.size(), s[0], s[1], s[2]}, 0.0);
  const std::size_t per = shape_numel(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = samples[indices[i]].image;
    if (img.shape != s) throw ShapeError("sample '" + samples[indices[i]].id + "' has a different image shape");
    std::copy(img.data.begin(), img.data.end(), batch.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return batch;
}

namespace {

struct EvalPass {
  double loss = 0.0;
  std::vector<double> prob_positive;
  std::vector<int> predicted;
};

EvalPass eval_pass(const Network& model, std::span<const Sample> samples, std::size_t batch = 64) {
  EvalPass out;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(samples[i].label);
    Tape tape;
    Var x = tape.leaf(stack_images(samples, idx));
    Var logits = model.forward(tape, x);
    Var loss = ops::softmax_cross_entropy(logits, labels);
    loss_sum += tape.value(loss)[0] * static_cast<double>(idx.size());
    const Tensor& z = tape.value(logits);
    const std::size_t k = z.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const double* row = &z.data[b * k];
      const double zmax = *std::max_element(row, row + k);
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - zmax);
      out.prob_positive.push_back(k > 1 ? std::exp(row[1] - zmax) / denom : 0.0);
      out.predicted.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  out.loss = loss_sum / static_cast<double>(samples.size());
  return out;
}

}  // namespace

TrainResult train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  if (train_set.empty() || val_set.empty()) throw ContractError("train: training and validation sets must be nonempty");

  std::vector<Tensor> velocity;
  for (const NamedTensor& p : model.parameters()) velocity.emplace_back(p.value.shape, 0.0);

  TrainResult result;
  std::vector<double> val_losses;
  std::vector<NamedTensor> best_state;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(config.seed, {"epoch", std::to_string(epoch)}));
      rng.shuffle(order.begin(), order.end());
    }
    std::vector<double> batch_losses;
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train_set[i].label);

      Tape tape;
      Var x = tape.leaf(stack_images(train_set, idx));
      Network::Trace trace = model.forward_trainable(tape, x, Mode::kTrain);
      Var loss = ops::softmax_cross_entropy(trace.logits, labels);
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batch_index + 1));
      }
      tape.backward(loss);
      auto params = model.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        sgd_momentum_step(params[i].value, tape.grad(trace.params[i]), velocity[i], config.learning_rate,
                          config.momentum);
      }
      batch_losses.push_back(loss_value);
      loss_sum += loss_value * static_cast<double>(idx.size());
    }

    const EvalPass val = eval_pass(model, val_set);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val_set.size(); ++i) correct += val.predicted[i] == val_set[i].label ? 1 : 0;
    EpochStats stats;
    stats.epoch = static_cast<std::uint32_t>(epoch);
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.val_loss = val.loss;
    stats.val_acc = static_cast<double>(correct) / static_cast<double>(val_set.size());
    if (!std::isfinite(stats.val_loss)) {
      throw DivergenceError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }

    val_losses.push_back(stats.val_loss);
    if (select_best_epoch(val_losses) == epoch - 1) {
      best_state = model.state();
      result.best_epoch = epoch;
      result.best_meta = CheckpointMeta{stats.epoch, stats.val_loss, config.seed};
    }
    result.history.push_back(stats);
    result.batch_losses.push_back(std::move(batch_losses));
    if (on_epoch) on_epoch(stats);
  }
  model.load_state(best_state);
  return result;
}

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("auc_roc: scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ContractError("auc_roc: undefined for a single-class test set");
  const std::vector<double> ranks = stats::midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

TestMetrics evaluate(const Network& model, std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("evaluate: empty test set");
  const EvalPass pass = eval_pass(model, samples);
  TestMetrics m;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int y = samples[i].label, yhat = pass.predicted[i];
    labels.push_back(y);
    correct += y == yhat ? 1 : 0;
    if (y == 1 && yhat == 1) ++m.confusion.tp;
    if (y == 0 && yhat == 1) ++m.confusion.fp;
    if (y == 0 && yhat == 0) ++m.confusion.tn;
    if (y == 1 && yhat == 0) ++m.confusion.fn;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  m.cross_entropy = pass.loss;
  m.auc_roc = auc_roc(pass.prob_positive, labels);
  return m;
}

}  // namespace attreval
