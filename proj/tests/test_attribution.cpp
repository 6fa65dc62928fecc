// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "attreval/attribution.hpp"
#include "attreval/autograd.hpp"
#include "attreval/error.hpp"
#include "support.hpp"

namespace attreval {
namespace {

using testing::random_tensor;

// logits = W2 relu(W1 x + b1) + b2 on the flattened input.
class MlpNet final : public Network {
 public:
  MlpNet(Tensor w1, Tensor b1, Tensor w2, Tensor b2) {
    params_ = {{"w1", std::move(w1)}, {"b1", std::move(b1)}, {"w2", std::move(w2)}, {"b2", std::move(b2)}};
  }
  std::string_view name() const override { return "mlp"; }
  std::size_t num_classes() const override { return params_[2].value.dim(0); }

 protected:
  Var run(Tape&, std::span<const Var> p, Var input, const BatchNormSlots&) const override {
    return ops::linear(ops::relu(ops::linear(ops::flatten(input), p[0], p[1])), p[2], p[3]);
  }
};

LinearNet linear_net() {
  return LinearNet(Tensor({2, 4}, std::vector<double>{0.5, -1.0, 2.0, 0.0, -0.25, 0.75, 1.5, -3.0}),
                   Tensor({2}, std::vector<double>{0.1, -0.2}));
}

const Tensor kX({1, 2, 2}, std::vector<double>{0.3, -0.8, 1.1, 0.6});

TEST(Saliency, LinearModelGivesAbsoluteWeights) {
  const LinearNet net = linear_net();
  for (int c : {0, 1}) {
    const Tensor s = saliency(net, kX, c);
    EXPECT_EQ(s.shape, (Shape{2, 2}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s[i], std::abs(net.parameters()[0].value[c * 4 + i]));
  }
}

TEST(Saliency, MaxOverChannels) {
  // two channels of a 1x1 image; weights for class 0 are (0.5, -2)
  const LinearNet net(Tensor({1, 2}, std::vector<double>{0.5, -2.0}), Tensor({1}, 0.0));
  const Tensor s = saliency(net, Tensor({2, 1, 1}, std::vector<double>{1.0, 1.0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 2.0);
}

TEST(Saliency, MatchesFiniteDifferencesThroughAResidualNet) {
  Model model(mini_spec("mini-d2"), 4);
  std::mt19937_64 gen(12);
  for (NamedTensor& b : model.buffers()) {
    for (double& v : b.value.data) v = b.name.find("var") != std::string::npos ? 0.5 + std::abs(v + 0.2) : 0.05;
  }
  const Tensor x = random_tensor({1, 10, 10}, gen);
  const Tensor s = saliency(model, x, 1);
  const Tensor fd = finite_difference_gradient(
      [&](const Tensor& v) {
        Tensor batch({1, 1, 10, 10}, v.data);
        return model.logits(batch)[1];
      },
      x);
  std::vector<double> a(s.data), f;
  for (double v : fd.data) f.push_back(std::abs(v));
  EXPECT_LE(testing::relative_error(a, f), 1e-6);
}

TEST(InputGradients, BatchRowsMatchSingleSamples) {
  const Model model(mini_spec("mini-d4"), 6);
  std::mt19937_64 gen(13);
  const Tensor batch = random_tensor({3, 1, 8, 8}, gen);
  const std::vector<int> classes{0, 1, 1};
  std::vector<double> scores;
  const Tensor g = input_gradients(model, batch, classes, &scores);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor one({1, 1, 8, 8}, std::vector<double>(batch.data.begin() + n * 64, batch.data.begin() + (n + 1) * 64));
    std::vector<double> s1;
    const Tensor g1 = input_gradients(model, one, std::vector<int>{classes[n]}, &s1);
    EXPECT_DOUBLE_EQ(scores[n], s1[0]);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(g[n * 64 + i], g1[i], 1e-13);
  }
}

TEST(IntegratedGradients, ExactOnLinearModelForAnyStepCount) {
  const LinearNet net = linear_net();
  const Tensor base({1, 2, 2}, std::vector<double>{-1.0, 0.2, 0.0, 0.5});
  for (std::size_t m : {1u, 4u, 256u}) {
    IGConfig cfg;
    cfg.steps = m;
    cfg.baseline = base;
    const IGResult r = integrated_gradients(net, kX, 1, cfg);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(r.values[i], net.parameters()[0].value[4 + i] * (kX[i] - base[i]), 1e-12) << "m=" << m;
    }
    EXPECT_LE(r.gap, 1e-12);
  }
}

TEST(IntegratedGradients, DefaultBaselineIsBlack) {
  const LinearNet net = linear_net();
  IGConfig cfg;
  cfg.steps = 2;
  const IGResult r = integrated_gradients(net, kX, 0, cfg);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.values[i], net.parameters()[0].value[i] * (kX[i] + 1.0), 1e-12);
}

TEST(IntegratedGradients, InputEqualToBaselineGivesZero) {
  const Model model(mini_spec("mini-d2"), 1);
  std::mt19937_64 gen(14);
  const Tensor x = random_tensor({1, 6, 6}, gen);
  IGConfig cfg;
  cfg.steps = 8;
  cfg.baseline = x;
  const IGResult r = integrated_gradients(model, x, 0, cfg);
  for (double v : r.values.data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.score_delta, 0.0);
}

// f(x) = 1 - relu(1 - x) is flat at x = 2, yet differs from f(0).
TEST(IntegratedGradients, SensitivityWhereTheGradientVanishes) {
  const MlpNet net(Tensor({1, 1}, -1.0), Tensor({1}, 1.0), Tensor({1, 1}, -1.0), Tensor({1}, 1.0));
  const Tensor x({1, 1, 1}, 2.0);
  EXPECT_EQ(saliency(net, x, 0)[0], 0.0);
  IGConfig cfg;
  cfg.steps = 256;
  cfg.baseline = Tensor({1, 1, 1}, 0.0);
  const IGResult r = integrated_gradients(net, x, 0, cfg);
  EXPECT_NEAR(r.values[0], 1.0, 1e-12);
  EXPECT_NEAR(r.score_delta, 1.0, 1e-12);
}

// Same function, different parameters: W2 relu(W1 x) == (2 W2) relu(W1 x / 2).
TEST(IntegratedGradients, ImplementationInvariance) {
  std::mt19937_64 gen(15);
  const Tensor w1 = random_tensor({5, 9}, gen), w2 = random_tensor({2, 5}, gen);
  Tensor w1h = w1, w2d = w2;
  for (double& v : w1h.data) v *= 0.5;
  for (double& v : w2d.data) v *= 2.0;
  const MlpNet a(w1, Tensor({5}, 0.0), w2, Tensor({2}, 0.3));
  const MlpNet b(w1h, Tensor({5}, 0.0), w2d, Tensor({2}, 0.3));
  const Tensor x = random_tensor({1, 3, 3}, gen);
  IGConfig cfg;
  cfg.steps = 32;
  const IGResult ra = integrated_gradients(a, x, 1, cfg), rb = integrated_gradients(b, x, 1, cfg);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(ra.values[i], rb.values[i], 1e-8);
}

TEST(IntegratedGradients, BaselineShapeMismatchIsAContractError) {
  IGConfig cfg;
  cfg.baseline = Tensor({1, 3, 3}, 0.0);
  EXPECT_THROW(integrated_gradients(linear_net(), kX, 0, cfg), ContractError);
}

TEST(GradientShap, StratifiedNoiselessEqualsIntegratedGradients) {
  const Model model(mini_spec("mini-d2"), 2);
  std::mt19937_64 gen(16);
  const Tensor x = random_tensor({1, 8, 8}, gen), base = random_tensor({1, 8, 8}, gen);
  IGConfig ig;
  ig.steps = 24;
  ig.baseline = base;
  GSConfig gs;
  gs.samples = 24;
  gs.sigma = 0.0;
  gs.baselines = {base};
  gs.stratified_alpha = true;
  const Tensor a = integrated_gradients(model, x, 1, ig).values, b = gradient_shap(model, x, 1, gs);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(GradientShap, SeededAndBaselineAtInputGivesZero) {
  const Model model(mini_spec("mini-d2"), 2);
  std::mt19937_64 gen(17);
  const Tensor x = random_tensor({1, 8, 8}, gen);
  GSConfig gs;
  gs.samples = 8;
  gs.baselines = {black_image({1, 8, 8}, 0.5, 0.5), random_tensor({1, 8, 8}, gen)};
  gs.seed = 99;
  const Tensor a = gradient_shap(model, x, 0, gs), b = gradient_shap(model, x, 0, gs);
  EXPECT_TRUE(bit_identical(a, b));
  gs.seed = 100;
  EXPECT_FALSE(bit_identical(a, gradient_shap(model, x, 0, gs)));

  GSConfig same;
  same.sigma = 0.0;
  same.baselines = {x};
  for (double v : gradient_shap(model, x, 0, same).data) EXPECT_EQ(v, 0.0);
}

TEST(GradientShap, ConfigurationErrors) {
  GSConfig gs;
  EXPECT_THROW(gradient_shap(linear_net(), kX, 0, gs), ConfigError);
  gs.baselines = {Tensor({1, 3, 3}, 0.0)};
  EXPECT_THROW(gradient_shap(linear_net(), kX, 0, gs), ContractError);
}

TEST(Shapley, ProductGameSplitsEvenly) {
  const auto phi = shapley_exact(2, [](std::uint32_t s) { return (s & 1u) && (s & 2u) ? 1.0 : 0.0; });
  EXPECT_DOUBLE_EQ(phi[0], 0.5);
  EXPECT_DOUBLE_EQ(phi[1], 0.5);
}

TEST(Shapley, AdditiveGameReturnsContributions) {
  const std::vector<double> c{1.5, -2.0, 0.25, 4.0};
  const auto phi = shapley_exact(4, [&](std::uint32_t s) {
    double v = 0.0;
    for (std::size_t i = 0; i < 4; ++i) v += (s >> i & 1u) ? c[i] : 0.0;
    return v;
  });
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(phi[i], c[i], 1e-14);
}

TEST(Shapley, MatchesPermutationOracleWithEfficiencyAndDummy) {
  std::mt19937_64 gen(18);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> table(1u << 6);
  for (double& v : table) v = u(gen);
  // player 5 is a dummy: f(S) ignores it
  const auto f = [&](std::uint32_t s) { return table[s & 31u]; };
  const auto phi = shapley_exact(6, f);
  const auto oracle = testing::permutation_shapley(6, f);
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(phi[i], oracle[i], 1e-12);
    total += phi[i];
  }
  EXPECT_NEAR(total, f(63) - f(0), 1e-12);
  EXPECT_NEAR(phi[5], 0.0, 1e-15);
}

TEST(Shapley, TooManyPlayers) {
  EXPECT_THROW(shapley_exact(kMaxShapleyPlayers + 1, [](std::uint32_t) { return 0.0; }), ContractError);
}

TEST(Shapley, MaskingGameOnAModel) {
  const Model model(mini_spec("mini-d2"), 7);
  std::mt19937_64 gen(19);
  const Tensor x = random_tensor({1, 6, 6}, gen), base({1, 6, 6}, -1.0);
  const auto part = grid_partition(1, 6, 6, 2, 2);
  ASSERT_EQ(part.size(), 36u);
  EXPECT_EQ(part[0], 0u);
  EXPECT_EQ(part[5], 1u);
  EXPECT_EQ(part[35], 3u);
  const auto score = [&](const Tensor& v) { return model.logits(Tensor({1, 1, 6, 6}, v.data))[1]; };
  const auto phi = shapley_exact(score, x, base, part);
  const auto oracle = testing::permutation_shapley(4, [&](std::uint32_t s) {
    Tensor v = base;
    for (std::size_t i = 0; i < 36; ++i) {
      if (s >> part[i] & 1u) v[i] = x[i];
    }
    return score(v);
  });
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(phi[i], oracle[i], 1e-12);
}

TEST(Heatmap, ZeroIsMidGrayAndExtremesSaturate) {
  const auto rgb = heatmap_rgb(Tensor({1, 3}, std::vector<double>{0.0, 2.0, -2.0}));
  EXPECT_EQ(rgb, (std::vector<std::uint8_t>{128, 128, 128, 255, 0, 0, 0, 0, 255}));
  for (std::uint8_t v : heatmap_rgb(Tensor({2, 2}, 0.0))) EXPECT_EQ(v, 128);
}

TEST(AttributionFile, RoundTripAndCorruption) {
  const std::filesystem::path dir = std::filesystem::path(ATTR_EVAL_SCRATCH) / "attribution";
  std::filesystem::create_directories(dir);
  std::mt19937_64 gen(20);
  std::vector<AttributionMap> maps;
  for (int i = 0; i < 3; ++i) {
    maps.push_back({"s" + std::to_string(i), "mini-d4", Method::kGradientShap, i % 2, random_tensor({5, 4}, gen)});
  }
  const std::string path = (dir / "gs.aevt").string();
  save_attributions(path, maps, 42);
  const auto back = load_attributions(path);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].sample_id, maps[i].sample_id);
    EXPECT_EQ(back[i].model_id, "mini-d4");
    EXPECT_EQ(back[i].method, Method::kGradientShap);
    EXPECT_EQ(back[i].class_index, maps[i].class_index);
    EXPECT_TRUE(bit_identical(back[i].values, maps[i].values));
  }
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_attributions(path), FormatError);
  EXPECT_THROW(load_attributions((dir / "absent.aevt").string()), IoError);
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : all_methods()) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("lime"), ConfigError);
}

}  // namespace
}  // namespace attreval
