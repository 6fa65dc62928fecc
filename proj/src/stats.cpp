// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

#include "attreval/error.hpp"

namespace attreval::stats {

// ---------------------------------------------------------------------------
// Special functions

namespace {

constexpr int kMaxIterations = 10000;
constexpr double kEps = 1e-16;

// P(a, x) by its power series; converges quickly for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < kMaxIterations; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Legendre continued fraction (modified Lentz); x >= a + 1.
double gamma_q_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw ContractError("regularized_gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_continued_fraction(a, x);
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw ContractError("chi_square_sf: degrees of freedom must be positive");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Ranks

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double tie_term(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    total += t * t * t - t;
    i = j + 1;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Kruskal-Wallis

KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw ContractError("kruskal_wallis: at least two groups are required");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw ContractError("kruskal_wallis: every group must be nonempty");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const double n = static_cast<double>(pooled.size());
  if (pooled.size() < 3) throw ContractError("kruskal_wallis: at least three observations are required");
  KruskalWallisResult out;
  out.df = groups.size() - 1;
  const double correction = 1.0 - tie_term(pooled) / (n * n * n - n);
  if (correction <= 0.0) return out;  // all values identical: H = 0, p = 1

  const std::vector<double> ranks = midranks(pooled);
  const double center = (n + 1.0) / 2.0;
  double acc = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rank_sum += ranks[offset + i];
    const double nj = static_cast<double>(g.size());
    const double mean_rank = rank_sum / nj;
    acc += nj * (mean_rank - center) * (mean_rank - center);
    offset += g.size();
  }
  out.h = 12.0 / (n * (n + 1.0)) * acc / correction;
  out.p = chi_square_sf(out.h, static_cast<double>(out.df));
  return out;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

std::vector<double> exact_u_distribution(std::size_t n_a, std::size_t n_b) {
  // counts[i][j][u]: arrangements of i a's and j b's with U_a = u; rolled over i.
  const std::size_t max_u = n_a * n_b;
  std::vector<std::vector<double>> prev(n_b + 1, std::vector<double>(max_u + 1, 0.0));
  for (std::size_t j = 0; j <= n_b; ++j) prev[j][0] = 1.0;  // i = 0
  for (std::size_t i = 1; i <= n_a; ++i) {
    std::vector<std::vector<double>> cur(n_b + 1, std::vector<double>(max_u + 1, 0.0));
    cur[0][0] = 1.0;
    for (std::size_t j = 1; j <= n_b; ++j) {
      for (std::size_t u = 0; u <= i * j; ++u) {
        // Largest element is an 'a' (it beats all j b's) or a 'b'.
        double c = cur[j - 1][u];
        if (u >= j) c += prev[j][u - j];
        cur[j][u] = c;
      }
    }
    prev = std::move(cur);
  }
  std::vector<double> dist = prev[n_b];
  const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
  for (double& v : dist) v /= total;
  return dist;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, MwuMode mode) {
  if (a.empty() || b.empty()) throw ContractError("mann_whitney_u: both samples must be nonempty");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum += ranks[i];

  MannWhitneyResult out;
  out.u = rank_sum - na * (na + 1.0) / 2.0;
  const double n = na + nb;
  const double ties = tie_term(pooled);
  const double mean = na * nb / 2.0;
  const double var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  const double sd = var > 0.0 ? std::sqrt(var) : 0.0;
  out.z = sd > 0.0 ? (out.u - mean) / sd : 0.0;

  if (mode == MwuMode::kExact) {
    if (a.size() + b.size() > 20) {
      throw ContractError("mann_whitney_u: exact mode supports at most 20 observations");
    }
    if (ties > 0.0) {
      out.notice = "ties present; exact mode fell back to the normal approximation";
    } else {
      const std::vector<double> dist = exact_u_distribution(a.size(), b.size());
      const auto u = static_cast<std::size_t>(std::llround(out.u));
      double lower = 0.0, upper = 0.0;
      for (std::size_t k = 0; k <= u; ++k) lower += dist[k];
      for (std::size_t k = u; k < dist.size(); ++k) upper += dist[k];
      out.p = std::min(1.0, 2.0 * std::min(lower, upper));
      out.mode = MwuMode::kExact;
      return out;
    }
  }
  out.mode = MwuMode::kNormal;
  if (sd == 0.0) {
    out.p = 1.0;
    return out;
  }
  const double zc = std::max(0.0, std::abs(out.u - mean) - 0.5) / sd;
  out.p = std::min(1.0, 2.0 * normal_sf(zc));
  return out;
}

std::vector<double> bonferroni(std::span<const double> pvals, std::size_t m) {
  if (m < pvals.size()) throw ContractError("bonferroni: m must be at least the number of tests");
  std::vector<double> out;
  out.reserve(pvals.size());
  for (double p : pvals) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("bonferroni: p-value outside [0, 1]");
    out.push_back(std::min(1.0, static_cast<double>(m) * p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model comparison

ComparisonReport compare_models(std::span<const EvalRecord> records,
                                std::span<const std::string> model_order, double alpha) {
  std::vector<std::string> models(model_order.begin(), model_order.end());
  if (models.empty()) {
    for (const EvalRecord& r : records) {
      if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }
  }
  // (metric, label, method, model) -> values in record order
  std::map<std::tuple<std::string, int, std::string, std::string>, std::vector<double>> groups;
  for (const EvalRecord& r : records) {
    groups[{"rra", r.label, r.method, r.model}].push_back(r.rra);
    groups[{"par", r.label, r.method, r.model}].push_back(r.par);
  }

  ComparisonReport report;
  report.alpha = alpha;
  for (const std::string& metric : comparison_metrics()) {
    for (int label : {kDiseased, kHealthy}) {
      for (const std::string& method : comparison_methods()) {
        OmnibusCell cell;
        cell.metric = metric;
        cell.label = label;
        cell.method = method;
        std::vector<std::vector<double>> values;
        std::size_t total = 0;
        for (const std::string& model : models) {
          auto it = groups.find({metric, label, method, model});
          if (it == groups.end() || it->second.empty()) continue;
          cell.models.push_back(model);
          cell.group_sizes.push_back(it->second.size());
          total += it->second.size();
          values.push_back(it->second);
        }
        if (values.size() < 2 || total < 3) {
          cell.note = "fewer than two models with records";
          report.cells.push_back(std::move(cell));
          continue;
        }
        cell.available = true;
        cell.kw = kruskal_wallis(values);
        cell.significant = cell.kw.p < alpha;
        const std::size_t m = values.size() * (values.size() - 1) / 2;
        report.bonferroni_m = std::max(report.bonferroni_m, m);
        for (std::size_t i = 0; i < values.size(); ++i) {
          for (std::size_t j = i + 1; j < values.size(); ++j) {
            const MannWhitneyResult mw = mann_whitney_u(values[i], values[j]);
            PairwiseResult pr;
            pr.model_a = cell.models[i];
            pr.model_b = cell.models[j];
            pr.u = mw.u;
            pr.p_raw = mw.p;
            pr.p_adjusted = std::min(1.0, static_cast<double>(m) * mw.p);
            pr.significant = pr.p_adjusted < alpha;
            cell.pairs.push_back(std::move(pr));
          }
        }
        ++report.available_cells;
        if (cell.significant) ++report.significant_cells;
        report.cells.push_back(std::move(cell));
      }
    }
  }
  return report;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string omnibus_csv(const ComparisonReport& report) {
  std::string out = "metric,class,method,H,p,significant\n";
  for (const OmnibusCell& c : report.cells) {
    out += c.metric + "," + class_name(c.label) + "," + c.method + ",";
    if (c.available) {
      out += num(c.kw.h) + "," + num(c.kw.p) + "," + (c.significant ? "1" : "0") + "\n";
    } else {
      out += "NA,NA,NA\n";
    }
  }
  return out;
}

std::string pairwise_csv(const ComparisonReport& report) {
  std::string out = "metric,class,method,model_a,model_b,U,p_raw,p_adjusted,significant\n";
  for (const OmnibusCell& c : report.cells) {
    for (const PairwiseResult& p : c.pairs) {
      out += c.metric + "," + class_name(c.label) + "," + c.method + "," + p.model_a + "," + p.model_b +
             "," + num(p.u) + "," + num(p.p_raw) + "," + num(p.p_adjusted) + "," +
             (p.significant ? "1" : "0") + "\n";
    }
  }
  return out;
}

}  // namespace attreval::stats
