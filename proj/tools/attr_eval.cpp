// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// attr-eval gen-data|train|explain|evaluate|compare|report --config <path>

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "attreval/error.hpp"
#include "attreval/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kState = 3, kIo = 4 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train residual classifiers, explain them and score the explanations against masks"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string model;
  std::string method;
  bool heatmaps = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Write the synthetic dataset and its manifest");
  CLI::App* train = app.add_subcommand("train", "Train the model family (or one model)");
  CLI::App* explain = app.add_subcommand("explain", "Attribute every test sample");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score attributions against the masks");
  CLI::App* compare = app.add_subcommand("compare", "Kruskal-Wallis and pairwise Mann-Whitney U across models");
  CLI::App* report = app.add_subcommand("report", "Write the markdown report");
  for (CLI::App* sub : {gen, train, explain, evaluate, compare, report}) add_config(sub);
  train->add_option("--model", model, "Model name, e.g. mini-d2");
  explain->add_option("--model", model, "Model name, e.g. mini-d2");
  explain->add_option("--method", method, "saliency | gradient_shap | integrated_gradients");
  explain->add_flag("--heatmaps", heatmaps, "Also write PPM heatmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  const auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
  try {
    const attreval::ExperimentConfig config = attreval::load_config(config_path);
    if (gen->parsed()) attreval::cmd_gen_data(config, std::cout);
    if (train->parsed()) attreval::cmd_train(config, opt(model), std::cout);
    if (explain->parsed()) attreval::cmd_explain(config, opt(model), opt(method), heatmaps, std::cout);
    if (evaluate->parsed()) attreval::cmd_evaluate(config, std::cout);
    if (compare->parsed()) attreval::cmd_compare(config, std::cout);
    if (report->parsed()) attreval::cmd_report(config, std::cout);
  } catch (const attreval::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const attreval::StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return kState;
  } catch (const attreval::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
