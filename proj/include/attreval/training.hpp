// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attreval/data.hpp"
#include "attreval/models.hpp"

namespace attreval {

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::uint64_t seed = 42;
  bool shuffle = true;
};

void validate(const TrainConfig& config);

// v <- momentum * v + g;  p <- p - lr * v
void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum);

struct EpochStats {
  std::uint32_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<std::vector<double>> batch_losses;  // per epoch, per batch
  std::size_t best_epoch = 0;                     // 1-based
  CheckpointMeta best_meta;
};

// Index of the strictly lowest value; ties resolve to the earliest.
std::size_t select_best_epoch(std::span<const double> val_losses);

using EpochCallback = std::function<void(const EpochStats&)>;

// Trains in place. On return the model holds the parameters and running
// statistics of the epoch with the lowest eval-mode validation loss.
// Throws DivergenceError on a non-finite batch loss.
TrainResult train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct TestMetrics {
  double accuracy = 0.0;
  double auc_roc = 0.0;
  double cross_entropy = 0.0;
  Confusion confusion;
};

// Rank-statistic AUC = U / (n_pos * n_neg) with midranks for tied scores.
// Throws ContractError when only one class is present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

// Eval-mode metrics; the score for AUC is the softmax probability of class 1.
TestMetrics evaluate(const Network& model, std::span<const Sample> samples);

// Stacks sample images into a [N, C, H, W] batch.
Tensor stack_images(std::span<const Sample> samples, std::span<const std::size_t> indices);

}  // namespace attreval
