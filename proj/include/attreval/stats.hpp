// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Rank-based comparison of explanation scores across models: Kruskal-Wallis
// omnibus tests, pairwise Mann-Whitney U tests and Bonferroni adjustment.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attreval/xai_metrics.hpp"

namespace attreval::stats {

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
double regularized_gamma_q(double a, double x);
double chi_square_sf(double x, double df);
double normal_sf(double z);

// 1-based ranks of the pooled values; tied values share their mean rank.
std::vector<double> midranks(std::span<const double> values);
// sum over tie groups of (t^3 - t).
double tie_term(std::span<const double> values);

struct KruskalWallisResult {
  double h = 0.0;
  std::size_t df = 0;
  double p = 1.0;
};

KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups);

enum class MwuMode { kExact, kNormal };

struct MannWhitneyResult {
  double u = 0.0;   // U of the first sample: R_a - n_a (n_a + 1) / 2
  double z = 0.0;   // (U - mean) / sd with tie-corrected sd, no continuity correction
  double p = 1.0;   // two-sided
  MwuMode mode = MwuMode::kNormal;
  std::string notice;  // set when exact mode fell back to the normal approximation
};

// Normal mode uses the tie-corrected variance and a 0.5 continuity correction.
// Exact mode enumerates the null distribution of U and needs n_a + n_b <= 20;
// tied data falls back to normal mode with a notice.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 MwuMode mode = MwuMode::kNormal);

// P(U = u) for u = 0 .. n_a * n_b under the null, no ties.
std::vector<double> exact_u_distribution(std::size_t n_a, std::size_t n_b);

// min(1, m * p), element-wise.
std::vector<double> bonferroni(std::span<const double> pvals, std::size_t m);

struct PairwiseResult {
  std::string model_a;
  std::string model_b;
  double u = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
};

struct OmnibusCell {
  std::string metric;  // "rra" | "par"
  int label = kDiseased;
  std::string method;
  bool available = false;
  std::string note;
  std::vector<std::string> models;
  std::vector<std::size_t> group_sizes;
  KruskalWallisResult kw;
  bool significant = false;
  std::vector<PairwiseResult> pairs;
};

struct ComparisonReport {
  double alpha = 0.05;
  std::size_t bonferroni_m = 0;
  std::vector<OmnibusCell> cells;
  std::size_t available_cells = 0;
  std::size_t significant_cells = 0;
};

inline const std::vector<std::string>& comparison_metrics() {
  static const std::vector<std::string> m{"rra", "par"};
  return m;
}
inline const std::vector<std::string>& comparison_methods() {
  static const std::vector<std::string> m{"saliency", "gradient_shap", "integrated_gradients"};
  return m;
}

// 2 metrics x 2 classes x 3 methods = 12 cells. Groups are the models (in
// `model_order` when given, otherwise first appearance); a cell with fewer than
// two populated models is marked unavailable instead of failing the run.
ComparisonReport compare_models(std::span<const EvalRecord> records,
                                std::span<const std::string> model_order = {}, double alpha = 0.05);

// `metric,class,method,H,p,significant`
std::string omnibus_csv(const ComparisonReport& report);
// `metric,class,method,model_a,model_b,U,p_raw,p_adjusted,significant`
std::string pairwise_csv(const ComparisonReport& report);

}  // namespace attreval::stats
