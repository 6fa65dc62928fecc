// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Residual classifier family: canonical ResNet-18/34/50/101 descriptions for
// parameter accounting and the reduced "mini" family used for experiments.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attreval/autograd.hpp"
#include "attreval/tensor.hpp"

namespace attreval {

enum class Mode { kTrain, kEval };

enum class BlockKind { kBasic, kBottleneck };

struct BlockSpec {
  BlockKind kind = BlockKind::kBasic;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  // 1x1 convolution + batchnorm on the shortcut instead of the identity.
  bool projection = false;

  std::size_t mid_channels() const {
    return kind == BlockKind::kBottleneck ? out_channels / 4 : out_channels;
  }
};

struct StemSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool max_pool = false;  // 3x3, stride 2, padding 1
};

// The first block of a stage is `first`; its repeats keep out_channels, use
// stride 1 and an identity shortcut.
struct StageSpec {
  BlockSpec first;
  std::size_t repeat = 1;
};

struct ModelSpec {
  std::string name;
  std::size_t input_channels = 1;
  std::size_t num_classes = 2;
  StemSpec stem;
  std::vector<StageSpec> stages;
  int depth_rank = 0;
  // Every convolution carries a bias term. Off for the canonical torchvision
  // layout; the published parameter table was produced with it on.
  bool conv_bias = false;
};

// Throws SpecError when the channel chain or a block invariant is broken.
void validate(const ModelSpec& spec);

// mini-d2, mini-d4, mini-d8, mini-d16 (depth_rank 1..4).
ModelSpec mini_spec(std::string_view name);
std::vector<std::string> mini_family();

// Canonical ResNet-{18,34,50,101}.
ModelSpec resnet_spec(int depth, bool conv_bias = false, std::size_t input_channels = 1,
                      std::size_t num_classes = 2);

// Accepts mini-d*, resnet18..resnet101 and resnet*-convbias.
ModelSpec spec_by_name(std::string_view name);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ParameterShape {
  std::string name;
  Shape shape;
};

// Trainable parameter names and shapes in construction order.
std::vector<ParameterShape> parameter_layout(const ModelSpec& spec);
std::size_t count_parameters(const ModelSpec& spec);

// Anything that maps a batch of inputs to class logits on a tape.
class Network {
 public:
  virtual ~Network() = default;

  virtual std::string_view name() const = 0;
  virtual std::size_t num_classes() const = 0;

  std::span<NamedTensor> parameters() { return params_; }
  std::span<const NamedTensor> parameters() const { return params_; }
  std::span<NamedTensor> buffers() { return buffers_; }
  std::span<const NamedTensor> buffers() const { return buffers_; }

  struct Trace {
    Var logits;
    std::vector<Var> params;  // one leaf per parameter, in parameters() order
  };

  // Registers the parameters as leaves that require gradients. Train mode
  // folds batch statistics into the running buffers.
  Trace forward_trainable(Tape& tape, Var input, Mode mode);

  // Eval mode with the parameters as constants.
  Var forward(Tape& tape, Var input) const;

  // Convenience: eval-mode logits for a batch without keeping the tape.
  Tensor logits(const Tensor& input) const;

 protected:
  struct BatchNormSlots {
    Mode mode = Mode::kEval;
    std::span<const NamedTensor> stats;
    std::span<NamedTensor> mutable_stats;  // non-empty only in train mode
  };

  virtual Var run(Tape& tape, std::span<const Var> params, Var input,
                  const BatchNormSlots& bn) const = 0;

  // Batchnorm over buffers [mean_slot] / [mean_slot + 1].
  static Var batchnorm(Var x, Var gamma, Var beta, std::size_t mean_slot, const BatchNormSlots& bn);

  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

std::size_t count_parameters(const Network& net);

// Flatten + affine map.
class LinearNet final : public Network {
 public:
  LinearNet(std::size_t in_features, std::size_t num_classes, std::uint64_t init_seed = 0);
  LinearNet(Tensor weight, Tensor bias);

  std::string_view name() const override { return name_; }
  std::size_t num_classes() const override { return params_[0].value.dim(0); }

 protected:
  Var run(Tape& tape, std::span<const Var> params, Var input,
          const BatchNormSlots& bn) const override;

 private:
  std::string name_ = "linear";
};

// Residual classifier built from a ModelSpec.
class Model final : public Network {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  std::string_view name() const override { return spec_.name; }
  std::size_t num_classes() const override { return spec_.num_classes; }

  // Parameters followed by buffers.
  std::vector<NamedTensor> state() const;
  // Replaces values by name; every tensor must be present with a matching shape.
  void load_state(std::span<const NamedTensor> state);

 protected:
  Var run(Tape& tape, std::span<const Var> params, Var input,
          const BatchNormSlots& bn) const override;

 private:
  struct ConvRef {
    std::size_t weight = 0;
    std::ptrdiff_t bias = -1;
    Conv2dAttrs attrs;
  };
  struct BnRef {
    std::size_t gamma = 0, beta = 0, stats = 0;
  };
  struct BlockRef {
    BlockKind kind = BlockKind::kBasic;
    std::vector<ConvRef> convs;
    std::vector<BnRef> bns;
    bool projection = false;
    ConvRef proj;
    BnRef proj_bn;
  };

  ConvRef add_conv(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k,
                   std::size_t stride, std::size_t pad);
  BnRef add_bn(const std::string& prefix, std::size_t channels);
  Var apply_conv(Tape& tape, std::span<const Var> params, Var x, const ConvRef& c) const;
  Var apply_bn(std::span<const Var> params, Var x, const BnRef& b, const BatchNormSlots& bn) const;

  ModelSpec spec_;
  ConvRef stem_conv_;
  BnRef stem_bn_;
  std::vector<BlockRef> blocks_;
  std::size_t fc_weight_ = 0, fc_bias_ = 0;
};

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t init_seed);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  std::uint32_t epoch = 0;
  double val_loss = 0.0;
  std::uint64_t seed = 0;
};

std::vector<std::uint8_t> write_checkpoint(const Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
};

LoadedCheckpoint read_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace attreval
