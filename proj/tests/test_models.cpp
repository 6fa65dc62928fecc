// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "attreval/error.hpp"
#include "attreval/models.hpp"
#include "attreval/tensor_file.hpp"
#include "support.hpp"

namespace attreval {
namespace {

TEST(ParameterCount, PublishedDeepModelsNeedConvBiases) {
  EXPECT_EQ(count_parameters(resnet_spec(50, true)), 23532418u);
  EXPECT_EQ(count_parameters(resnet_spec(101, true)), 42550658u);
  EXPECT_EQ(count_parameters(spec_by_name("resnet50-convbias")), 23532418u);
  EXPECT_EQ(count_parameters(spec_by_name("resnet101-convbias")), 42550658u);
}

TEST(ParameterCount, MatchesLayerArithmetic) {
  for (int depth : {18, 34, 50, 101}) {
    for (bool bias : {false, true}) {
      EXPECT_EQ(count_parameters(resnet_spec(depth, bias)), testing::resnet_parameters_by_hand(depth, bias))
          << "ResNet-" << depth << (bias ? " with conv biases" : "");
    }
  }
}

// torchvision's ImageNet models (3 channels, 1000 classes) are a second,
// externally published reference for the canonical layout.
TEST(ParameterCount, CanonicalImageNetReference) {
  EXPECT_EQ(count_parameters(resnet_spec(18, false, 3, 1000)), 11689512u);
  EXPECT_EQ(count_parameters(resnet_spec(34, false, 3, 1000)), 21797672u);
  EXPECT_EQ(count_parameters(resnet_spec(50, false, 3, 1000)), 25557032u);
  EXPECT_EQ(count_parameters(resnet_spec(101, false, 3, 1000)), 44549160u);
}

TEST(ParameterCount, ShallowModelsDoNotMatchThePublishedTable) {
  EXPECT_NE(count_parameters(resnet_spec(18, false)), 6139842u);
  EXPECT_NE(count_parameters(resnet_spec(18, true)), 6139842u);
  EXPECT_NE(count_parameters(resnet_spec(34, false)), 12329218u);
  EXPECT_NE(count_parameters(resnet_spec(34, true)), 12329218u);
}

TEST(ParameterCount, LinearLayer) {
  LinearNet net(10, 2, 0);
  EXPECT_EQ(count_parameters(net), 22u);
}

TEST(ParameterCount, MiniFamilyByHandAndMonotone) {
  // stem 9*8 + 16; basic block at 8 ch: 2 * (576 + 16); head 8*2 + 2
  EXPECT_EQ(count_parameters(mini_spec("mini-d2")), 88u + 2u * 1184u + 18u);
  EXPECT_EQ(count_parameters(mini_spec("mini-d4")), 88u + 4u * 1184u + 18u);
  std::size_t prev = 0;
  int prev_rank = 0;
  for (const std::string& name : mini_family()) {
    const ModelSpec spec = mini_spec(name);
    const std::size_t n = count_parameters(spec);
    EXPECT_GT(n, prev) << name;
    EXPECT_GT(spec.depth_rank, prev_rank) << name;
    prev = n;
    prev_rank = spec.depth_rank;
    const Model m(spec, 1);
    EXPECT_EQ(count_parameters(m), n);
    std::size_t layout = 0;
    for (const ParameterShape& p : parameter_layout(spec)) layout += shape_numel(p.shape);
    EXPECT_EQ(layout, n);
  }
}

TEST(ModelSpec, Validation) {
  ModelSpec spec = mini_spec("mini-d8");
  spec.stages[1].first.in_channels = 12;
  EXPECT_THROW(validate(spec), SpecError);
  ModelSpec no_proj = mini_spec("mini-d8");
  no_proj.stages[1].first.projection = false;
  EXPECT_THROW(validate(no_proj), SpecError);
  EXPECT_THROW(spec_by_name("mini-d3"), ConfigError);
  EXPECT_THROW(spec_by_name("resnet19"), ConfigError);
}

TEST(ModelSpec, BottleneckWideningGetsProjection) {
  const ModelSpec spec = resnet_spec(50);
  const BlockSpec& first = spec.stages[0].first;
  EXPECT_EQ(first.kind, BlockKind::kBottleneck);
  EXPECT_EQ(first.in_channels, 64u);
  EXPECT_EQ(first.out_channels, 256u);
  EXPECT_EQ(first.stride, 1u);
  EXPECT_TRUE(first.projection);
  EXPECT_EQ(first.mid_channels(), 64u);
}

TEST(Model, ForwardShapeAndDeterminism) {
  const Model a(mini_spec("mini-d2"), 7), b(mini_spec("mini-d2"), 7), c(mini_spec("mini-d2"), 8);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_TRUE(bit_identical(a.parameters()[i].value, b.parameters()[i].value));
  }
  EXPECT_FALSE(bit_identical(a.parameters()[0].value, c.parameters()[0].value));
  std::mt19937_64 gen(1);
  const Tensor x = testing::random_tensor({1, 1, 32, 32}, gen);
  const Tensor z1 = a.logits(x), z2 = a.logits(x);
  EXPECT_EQ(z1.shape, (Shape{1, 2}));
  EXPECT_TRUE(bit_identical(z1, z2));
  EXPECT_THROW(a.logits(Tensor({1, 3, 32, 32}, 0.0)), ShapeError);
}

// A basic block with an identity shortcut is relu(bn2(conv2(relu(bn1(conv1 x)))) + x),
// rebuilt here from primitives.
TEST(Model, IdentityBlockEqualsPlainComposition) {
  Model m(mini_spec("mini-d2"), 3);
  std::mt19937_64 gen(2);
  for (NamedTensor& b : m.buffers()) {
    for (double& v : b.value.data) v = b.name.find("var") != std::string::npos ? 0.5 + std::abs(v + 0.3) : 0.1;
  }
  const Tensor x = testing::random_tensor({2, 1, 6, 6}, gen);
  const Tensor logits = m.logits(x);

  auto P = [&](const std::string& name) -> const Tensor& {
    for (const NamedTensor& p : m.parameters()) {
      if (p.name == name) return p.value;
    }
    for (const NamedTensor& p : m.buffers()) {
      if (p.name == name) return p.value;
    }
    throw std::runtime_error("missing " + name);
  };
  Tape t;
  auto conv = [&](Var v, const std::string& n) { return ops::conv2d(v, t.leaf(P(n + ".weight")), std::nullopt, {1, 1}); };
  auto bn = [&](Var v, const std::string& n) {
    return ops::batchnorm2d_eval(v, t.leaf(P(n + ".weight")), t.leaf(P(n + ".bias")), P(n + ".running_mean"),
                                 P(n + ".running_var"));
  };
  Var h = ops::relu(bn(conv(t.leaf(x), "stem.conv"), "stem.bn"));
  for (const char* blk : {"stages.0.0", "stages.0.1"}) {
    const std::string b = blk;
    Var y = ops::relu(bn(conv(h, b + ".conv1"), b + ".bn1"));
    y = bn(conv(y, b + ".conv2"), b + ".bn2");
    h = ops::relu(ops::add(y, h));
  }
  Var out = ops::linear(ops::global_avg_pool(h), t.leaf(P("fc.weight")), t.leaf(P("fc.bias")));
  for (std::size_t i = 0; i < logits.numel(); ++i) EXPECT_NEAR(t.value(out)[i], logits[i], 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Model m(mini_spec("mini-d4"), 11);
  for (NamedTensor& b : m.buffers()) b.value.data[0] = 0.123456789;
  const CheckpointMeta meta{7, 0.123, 42};
  const std::vector<std::uint8_t> bytes = write_checkpoint(m, meta);
  const LoadedCheckpoint back = read_checkpoint(bytes);
  EXPECT_EQ(back.meta.epoch, 7u);
  EXPECT_EQ(back.meta.val_loss, 0.123);
  EXPECT_EQ(back.meta.seed, 42u);
  const auto s1 = m.state();
  const auto s2 = back.model->state();
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].name, s2[i].name);
    EXPECT_TRUE(bit_identical(s1[i].value, s2[i].value)) << s1[i].name;
  }
}

TEST(Checkpoint, CorruptBuffers) {
  const Model m(mini_spec("mini-d2"), 1);
  std::vector<std::uint8_t> bytes = write_checkpoint(m, {});
  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(read_checkpoint(bad_magic), FormatError);
  std::vector<std::uint8_t> bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(read_checkpoint(bad_version), VersionError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(read_checkpoint(truncated), FormatError) << "cut at " << cut;
  }
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(read_checkpoint(truncated), LengthError);
}

TEST(Checkpoint, LoadStateChecksNamesAndShapes) {
  Model m(mini_spec("mini-d2"), 1);
  auto state = m.state();
  state.pop_back();
  EXPECT_THROW(m.load_state(state), FormatError);
  state = m.state();
  state[0].value = Tensor({1}, 0.0);
  EXPECT_THROW(m.load_state(state), ShapeError);
}

}  // namespace
}  // namespace attreval
