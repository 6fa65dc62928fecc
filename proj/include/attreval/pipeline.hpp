// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment orchestration behind the attr-eval subcommands. Every stage reads
// its inputs from and writes its outputs to the configured output directory.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attreval/attribution.hpp"
#include "attreval/data.hpp"
#include "attreval/training.hpp"
#include "attreval/xai_metrics.hpp"

namespace attreval {

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" | "manifest"
  SyntheticConfig synthetic;
  std::string manifest;  // used when source == "manifest"
  Preprocess preprocess;
  SplitFractions split;
};

struct AttributionSettings {
  std::string target = "true";  // "true" | "predicted"
  std::size_t ig_steps = 64;
  double ig_tolerance = 1e-3;  // relative completeness gap flagged in the sidecar
  std::size_t gs_samples = 64;
  double gs_sigma = 0.1;
  std::size_t gs_train_baselines = 16;
  std::size_t chunk = 32;
};

struct ExperimentConfig {
  std::string output_dir = "attr-eval-out";
  std::uint64_t seed = 42;
  DatasetConfig dataset;
  std::vector<std::string> models;  // ordered by depth rank
  TrainConfig train;
  std::vector<Method> methods;
  AttributionSettings attribution;
  MetricOptions metrics;
  double alpha = 0.05;
};

// Unknown keys, wrong types and inconsistent values raise ConfigError.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::string& path);
// Canonical JSON of the effective configuration (defaults filled in).
std::string config_json(const ExperimentConfig& config);
// 16 hex digits of FNV-1a over config_json().
std::string config_hash(const ExperimentConfig& config);

struct ExperimentPaths {
  std::string root;
  std::string data_dir() const { return root + "/data"; }
  std::string manifest() const { return data_dir() + "/manifest.csv"; }
  std::string model_dir(std::string_view model) const { return root + "/models/" + std::string(model); }
  std::string checkpoint(std::string_view model) const { return model_dir(model) + "/checkpoint.aevc"; }
  std::string metrics(std::string_view model) const { return model_dir(model) + "/metrics.json"; }
  std::string attribution_dir(std::string_view model) const { return root + "/attributions/" + std::string(model); }
  std::string attribution_file(std::string_view model, Method m) const {
    return attribution_dir(model) + "/" + std::string(method_name(m)) + ".aevt";
  }
  std::string eval_dir() const { return root + "/eval"; }
  std::string records() const { return eval_dir() + "/records.csv"; }
  std::string compare_dir() const { return root + "/compare"; }
  std::string report() const { return root + "/report/report.md"; }
};

ExperimentPaths paths(const ExperimentConfig& config);

// Dataset of the experiment after the seeded 70/20/10 split.
DatasetSplit load_experiment_data(const ExperimentConfig& config, std::ostream& log);

void cmd_gen_data(const ExperimentConfig& config, std::ostream& log);
void cmd_train(const ExperimentConfig& config, const std::optional<std::string>& model, std::ostream& log);
void cmd_explain(const ExperimentConfig& config, const std::optional<std::string>& model,
                 const std::optional<std::string>& method, bool heatmaps, std::ostream& log);
void cmd_evaluate(const ExperimentConfig& config, std::ostream& log);
void cmd_compare(const ExperimentConfig& config, std::ostream& log);
void cmd_report(const ExperimentConfig& config, std::ostream& log);

// Published trainable-parameter counts (1 input channel, 2 classes).
struct PublishedCount {
  int depth = 0;
  std::size_t parameters = 0;
};
const std::vector<PublishedCount>& published_parameter_counts();

struct ParameterRow {
  int depth = 0;
  std::size_t canonical = 0;  // torchvision layout
  std::size_t conv_bias = 0;  // every convolution with a bias
  std::size_t published = 0;
  bool matches = false;  // conv_bias == published
  std::string notice;
};
std::vector<ParameterRow> parameter_table();

// Mean and sample standard deviation (n - 1); sd is NaN for n < 2.
struct MeanSd {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
};
MeanSd mean_sd(const std::vector<double>& values);

}  // namespace attreval
