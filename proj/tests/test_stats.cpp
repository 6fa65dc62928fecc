// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <random>

#include "attreval/error.hpp"
#include "attreval/stats.hpp"
#include "attreval/training.hpp"

namespace attreval::stats {
namespace {

TEST(SpecialFunctions, ClosedFormsAndPublishedCell) {
  EXPECT_NEAR(chi_square_sf(2.0, 2), std::exp(-1.0), 1e-15);
  EXPECT_DOUBLE_EQ(normal_sf(0.0), 0.5);
  // H = 9.79 on 3 degrees of freedom is the one significant published cell, p = 0.02
  EXPECT_NEAR(chi_square_sf(9.79, 3), 0.0204, 5e-5);
  EXPECT_EQ(chi_square_sf(0.0, 4), 1.0);
}

TEST(SpecialFunctions, AgreeWithBoost) {
  for (double df : {1.0, 2.0, 3.0, 5.0, 11.0, 30.0}) {
    const boost::math::chi_squared dist(df);
    for (double x : {0.01, 0.5, 1.0, 2.7, 7.8, 15.0, 40.0, 90.0}) {
      const double ref = boost::math::cdf(boost::math::complement(dist, x));
      EXPECT_NEAR(chi_square_sf(x, df), ref, 1e-10 * std::max(ref, 1e-300) + 1e-300) << "x=" << x << " df=" << df;
    }
  }
  const boost::math::normal n01;
  for (double z : {-6.0, -2.5, -0.3, 0.0, 0.7, 1.96, 4.0, 9.0}) {
    const double ref = boost::math::cdf(boost::math::complement(n01, z));
    EXPECT_NEAR(normal_sf(z), ref, 1e-10 * ref) << z;
  }
}

TEST(Ranks, MidranksAndTieTerm) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0, 3.0};
  EXPECT_EQ(midranks(v), (std::vector<double>{4.0, 1.0, 4.0, 2.0, 4.0}));
  EXPECT_DOUBLE_EQ(tie_term(v), 24.0);  // one group of three: 27 - 3
}

TEST(KruskalWallis, IdenticalGroupsGiveZero) {
  const std::vector<std::vector<double>> g{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  const auto r = kruskal_wallis(g);
  EXPECT_NEAR(r.h, 0.0, 1e-15);
  EXPECT_NEAR(r.p, 1.0, 1e-15);
  EXPECT_EQ(r.df, 2u);
  const std::vector<std::vector<double>> flat{{4, 4}, {4, 4, 4}};
  const auto f = kruskal_wallis(flat);
  EXPECT_EQ(f.h, 0.0);
  EXPECT_EQ(f.p, 1.0);
}

// Ranks equal values; mean ranks 2, 5, 8 around 5: H = 12/90 * 3 * 18 = 7.2.
TEST(KruskalWallis, HandRankArithmetic) {
  const std::vector<std::vector<double>> g{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const auto r = kruskal_wallis(g);
  EXPECT_NEAR(r.h, 7.2, 1e-12);
  EXPECT_NEAR(r.p, std::exp(-3.6), 1e-12);
}

TEST(KruskalWallis, TieCorrection) {
  // pooled {1,1,2,2,3,3}: midranks 1.5,1.5,3.5,3.5,5.5,5.5
  const std::vector<std::vector<double>> g{{1, 1, 2}, {2, 3, 3}};
  const double rbar1 = (1.5 + 1.5 + 3.5) / 3.0, rbar2 = (3.5 + 5.5 + 5.5) / 3.0;
  const double h0 = 12.0 / 42.0 * 3.0 * ((rbar1 - 3.5) * (rbar1 - 3.5) + (rbar2 - 3.5) * (rbar2 - 3.5));
  const double c = 1.0 - 18.0 / 210.0;
  EXPECT_NEAR(kruskal_wallis(g).h, h0 / c, 1e-12);
}

TEST(KruskalWallis, PermutationInvariantAndErrors) {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> g(4);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t i = 0; i < 7 + j; ++i) g[j].push_back(nd(gen) + 0.2 * j);
  }
  const auto a = kruskal_wallis(g);
  auto shuffled = g;
  for (auto& grp : shuffled) std::shuffle(grp.begin(), grp.end(), gen);
  std::swap(shuffled[0], shuffled[3]);
  const auto b = kruskal_wallis(shuffled);
  EXPECT_NEAR(a.h, b.h, 1e-12);
  EXPECT_THROW(kruskal_wallis(std::vector<std::vector<double>>{{1, 2, 3}}), ContractError);
  EXPECT_THROW(kruskal_wallis(std::vector<std::vector<double>>{{1, 2}, {}}), ContractError);
}

TEST(KruskalWallis, TwoGroupsEqualSquaredMannWhitneyZ) {
  std::mt19937_64 gen(32);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 9 + trial; ++i) a.push_back(static_cast<double>(gen() % 10));
    for (int i = 0; i < 14; ++i) b.push_back(static_cast<double>(gen() % 12));
    const double z = mann_whitney_u(a, b).z;
    EXPECT_NEAR(kruskal_wallis(std::vector<std::vector<double>>{a, b}).h, z * z, 1e-9);
  }
}

TEST(MannWhitney, ExactSmallExample) {
  const auto r = mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4}, MwuMode::kExact);
  EXPECT_EQ(r.u, 0.0);
  EXPECT_NEAR(r.p, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.mode, MwuMode::kExact);
  const auto d = exact_u_distribution(2, 2);
  const std::vector<double> expect{1 / 6.0, 1 / 6.0, 2 / 6.0, 1 / 6.0, 1 / 6.0};
  ASSERT_EQ(d.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(d[i], expect[i], 1e-15);
}

TEST(MannWhitney, ExactDistributionSumsToOneAndIsSymmetric) {
  for (std::size_t na : {1u, 3u, 7u, 10u}) {
    for (std::size_t nb : {1u, 4u, 10u}) {
      const auto d = exact_u_distribution(na, nb);
      double s = 0.0;
      for (double p : d) s += p;
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (std::size_t u = 0; u < d.size(); ++u) EXPECT_NEAR(d[u], d[d.size() - 1 - u], 1e-15);
    }
  }
}

TEST(MannWhitney, ExactModeFallsBackOnTiesAndRefusesLargeSamples) {
  const auto r = mann_whitney_u(std::vector<double>{1, 2, 2}, std::vector<double>{2, 3}, MwuMode::kExact);
  EXPECT_EQ(r.mode, MwuMode::kNormal);
  EXPECT_FALSE(r.notice.empty());
  std::vector<double> a(11), b(10);
  for (std::size_t i = 0; i < 11; ++i) a[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < 10; ++i) b[i] = 100.0 + static_cast<double>(i);
  EXPECT_THROW(mann_whitney_u(a, b, MwuMode::kExact), ContractError);
  EXPECT_THROW(mann_whitney_u(std::vector<double>{}, b), ContractError);
}

TEST(MannWhitney, IdenticalSamplesGivePOne) {
  std::vector<double> a;
  std::mt19937_64 gen(33);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 200; ++i) a.push_back(nd(gen));
  const auto r = mann_whitney_u(a, a);
  EXPECT_NEAR(r.p, 1.0, 1e-12);
  EXPECT_NEAR(r.u, 200.0 * 200.0 / 2.0, 1e-9);
}

TEST(MannWhitney, UOverProductIsTheRankAuc) {
  std::mt19937_64 gen(34);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> pos, neg, scores;
    std::vector<int> labels;
    for (int i = 0; i < 15; ++i) {
      pos.push_back(static_cast<double>(gen() % 9));
      scores.push_back(pos.back());
      labels.push_back(1);
    }
    for (int i = 0; i < 11; ++i) {
      neg.push_back(static_cast<double>(gen() % 7));
      scores.push_back(neg.back());
      labels.push_back(0);
    }
    EXPECT_NEAR(mann_whitney_u(pos, neg).u / (15.0 * 11.0), auc_roc(scores, labels), 1e-14);
  }
}

TEST(Bonferroni, Examples) {
  EXPECT_EQ(bonferroni(std::vector<double>{0.01, 0.04}, 2), (std::vector<double>{0.02, 0.08}));
  EXPECT_EQ(bonferroni(std::vector<double>{0.6}, 2), (std::vector<double>{1.0}));
  const std::vector<double> p{0.0, 0.001, 0.2, 0.5, 1.0};
  const auto adj = bonferroni(p, 6);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_GE(adj[i], p[i]);
    if (i) EXPECT_GE(adj[i], adj[i - 1]);
  }
  EXPECT_THROW(bonferroni(std::vector<double>{1.2}, 1), ContractError);
  EXPECT_THROW(bonferroni(std::vector<double>{0.1, 0.2}, 1), ContractError);
}

std::vector<EvalRecord> null_records(std::mt19937_64& gen, std::size_t per_group, double shift_d16) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EvalRecord> recs;
  const std::vector<std::string> models{"mini-d2", "mini-d4", "mini-d8", "mini-d16"};
  for (const std::string& m : models) {
    for (const std::string& method : comparison_methods()) {
      for (int label : {kHealthy, kDiseased}) {
        for (std::size_t i = 0; i < per_group; ++i) {
          EvalRecord r;
          r.sample_id = "s" + std::to_string(i);
          r.model = m;
          r.method = method;
          r.label = label;
          r.rra = u(gen) + (m == "mini-d16" ? shift_d16 : 0.0);
          r.par = u(gen) + (m == "mini-d16" ? shift_d16 : 0.0);
          recs.push_back(r);
        }
      }
    }
  }
  return recs;
}

TEST(CompareModels, ShiftedModelIsFlaggedPairwise) {
  std::mt19937_64 gen(35);
  const auto recs = null_records(gen, 100, 0.3);
  const ComparisonReport rep = compare_models(recs);
  ASSERT_EQ(rep.cells.size(), 12u);
  EXPECT_EQ(rep.bonferroni_m, 6u);
  EXPECT_EQ(rep.available_cells, 12u);
  EXPECT_EQ(rep.significant_cells, 12u);
  for (const OmnibusCell& c : rep.cells) {
    ASSERT_EQ(c.pairs.size(), 6u);
    for (const PairwiseResult& p : c.pairs) {
      EXPECT_NEAR(p.p_adjusted, std::min(1.0, 6.0 * p.p_raw), 1e-15);
      EXPECT_EQ(p.significant, p.p_adjusted < 0.05);
      if (p.model_a == "mini-d16" || p.model_b == "mini-d16") EXPECT_TRUE(p.significant) << c.metric << " " << c.method;
    }
  }
}

TEST(CompareModels, NullFlagsAboutAlphaOfCells) {
  std::mt19937_64 gen(36);
  std::size_t flagged = 0, total = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const ComparisonReport r = compare_models(null_records(gen, 25, 0.0));
    flagged += r.significant_cells;
    total += r.cells.size();
  }
  const double rate = static_cast<double>(flagged) / static_cast<double>(total);
  EXPECT_NEAR(rate, 0.05, 0.025) << flagged << "/" << total;
}

TEST(CompareModels, MissingCoverageIsUnavailable) {
  std::mt19937_64 gen(37);
  auto recs = null_records(gen, 10, 0.0);
  std::erase_if(recs, [](const EvalRecord& r) {
    return r.method == "gradient_shap" && r.label == kHealthy && r.model != "mini-d2";
  });
  const ComparisonReport rep = compare_models(recs);
  EXPECT_EQ(rep.cells.size(), 12u);
  EXPECT_EQ(rep.available_cells, 10u);
  for (const OmnibusCell& c : rep.cells) {
    if (c.method == "gradient_shap" && c.label == kHealthy) {
      EXPECT_FALSE(c.available);
      EXPECT_FALSE(c.note.empty());
    }
  }
  const std::string csv = omnibus_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,class,method,H,p,significant");
}

}  // namespace
}  // namespace attreval::stats
