// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/xai_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "attreval/error.hpp"

namespace attreval {
namespace {

void check_shape(std::span<const double> relevance, const Mask& mask, const char* what) {
  if (relevance.size() != mask.size()) {
    throw ShapeError(std::string(what) + ": map has " + std::to_string(relevance.size()) +
                     " pixels, mask has " + std::to_string(mask.size()));
  }
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> rank_pixels(std::span<const double> relevance) {
  std::vector<std::size_t> order(relevance.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return relevance[a] > relevance[b]; });
  return order;
}

double relevance_rank_accuracy(std::span<const double> relevance, const Mask& mask, bool magnitude) {
  check_shape(relevance, mask, "relevance_rank_accuracy");
  const std::size_t k = mask.count();
  if (k == 0) throw ContractError("relevance_rank_accuracy: ground-truth mask is empty");
  std::vector<double> scores(relevance.begin(), relevance.end());
  if (magnitude) {
    for (double& v : scores) v = std::abs(v);
  }
  const std::vector<std::size_t> order = rank_pixels(scores);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += mask.bits[order[i]] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

RatioScore positive_attribution_ratio(std::span<const double> relevance, const Mask& mask) {
  check_shape(relevance, mask, "positive_attribution_ratio");
  double within = 0.0, total = 0.0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] > 0.0) {
      total += relevance[i];
      if (mask.bits[i]) within += relevance[i];
    }
  }
  if (total == 0.0) return {0.0, true};
  return {within / total, false};
}

RatioScore relevance_mass_accuracy(std::span<const double> relevance, const Mask& mask) {
  check_shape(relevance, mask, "relevance_mass_accuracy");
  double within = 0.0, total = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    total += relevance[i];
    mass += std::abs(relevance[i]);
    if (mask.bits[i]) within += relevance[i];
  }
  // a total inside the summation error bound is a cancelled zero
  const double bound = static_cast<double>(relevance.size()) * std::numeric_limits<double>::epsilon() * mass;
  if (std::abs(total) <= bound) return {0.0, true};
  return {within / total, false};
}

EvalRecord score_map(std::span<const double> relevance, const Mask& mask, const MetricOptions& opts) {
  EvalRecord r;
  r.rra = relevance_rank_accuracy(relevance, mask, opts.rra_magnitude);
  const RatioScore par = positive_attribution_ratio(relevance, mask);
  r.par = par.value;
  r.degenerate = par.degenerate;
  r.rma = relevance_mass_accuracy(relevance, mask).value;
  return r;
}

std::string eval_records_csv_header() { return "sample_id,model,method,class,rra,par,rma,degenerate"; }

std::string eval_record_csv_row(const EvalRecord& r) {
  return r.sample_id + "," + r.model + "," + r.method + "," + class_name(r.label) + "," +
         fmt_double(r.rra) + "," + fmt_double(r.par) + "," + fmt_double(r.rma) + "," +
         (r.degenerate ? "1" : "0");
}

std::vector<EvalRecord> parse_eval_records_csv(const std::string& text) {
  std::vector<EvalRecord> out;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != eval_records_csv_header()) throw FormatError("eval records: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw FormatError("eval records line " + std::to_string(line_no) + ": expected 8 columns");
    EvalRecord r;
    r.sample_id = cells[0];
    r.model = cells[1];
    r.method = cells[2];
    if (cells[3] == "diseased") {
      r.label = kDiseased;
    } else if (cells[3] == "healthy") {
      r.label = kHealthy;
    } else {
      throw FormatError("eval records line " + std::to_string(line_no) + ": unknown class '" + cells[3] + "'");
    }
    try {
      r.rra = std::stod(cells[4]);
      r.par = std::stod(cells[5]);
      r.rma = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw FormatError("eval records line " + std::to_string(line_no) + ": malformed number");
    }
    r.degenerate = cells[7] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace attreval
