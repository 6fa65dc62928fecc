// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Agreement between an attribution map and a ground-truth mask.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attreval/data.hpp"

namespace attreval {

// Pixel indices by relevance, descending; ties go to the lower row-major index.
std::vector<std::size_t> rank_pixels(std::span<const double> relevance);

// Share of the |GT| highest-ranked pixels that fall inside GT. With
// `magnitude` the ranking uses |relevance| instead of the signed value.
double relevance_rank_accuracy(std::span<const double> relevance, const Mask& mask,
                               bool magnitude = false);

struct RatioScore {
  double value = 0.0;
  bool degenerate = false;  // denominator was zero; value is the 0 sentinel
};

// Positive relevance inside GT over all positive relevance.
RatioScore positive_attribution_ratio(std::span<const double> relevance, const Mask& mask);

// Signed relevance inside GT over signed total relevance.
RatioScore relevance_mass_accuracy(std::span<const double> relevance, const Mask& mask);

struct EvalRecord {
  std::string sample_id;
  std::string model;
  std::string method;
  int label = kHealthy;
  double rra = 0.0;
  double par = 0.0;
  double rma = 0.0;
  bool degenerate = false;  // no positive attributions
};

struct MetricOptions {
  bool rra_magnitude = false;
};

EvalRecord score_map(std::span<const double> relevance, const Mask& mask, const MetricOptions& opts = {});

// `sample_id,model,method,class,rra,par,rma,degenerate`
std::string eval_records_csv_header();
std::string eval_record_csv_row(const EvalRecord& r);
std::vector<EvalRecord> parse_eval_records_csv(const std::string& text);

}  // namespace attreval
