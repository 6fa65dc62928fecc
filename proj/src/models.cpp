// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/models.hpp"

#include <cmath>
#include <map>
#include <utility>

#include "attreval/error.hpp"
#include "attreval/rng.hpp"
#include "attreval/tensor_file.hpp"

namespace attreval {

// ---------------------------------------------------------------------------
// Specs

void validate(const ModelSpec& spec) {
  auto fail = [&](const std::string& msg) { throw SpecError("model spec '" + spec.name + "': " + msg); };
  if (spec.input_channels == 0) fail("input_channels must be positive");
  if (spec.num_classes < 2) fail("num_classes must be at least 2");
  if (spec.stem.out_channels == 0 || spec.stem.kernel == 0 || spec.stem.stride == 0) {
    fail("stem convolution needs positive channels, kernel and stride");
  }
  if (spec.stages.empty()) fail("at least one stage is required");
  std::size_t channels = spec.stem.out_channels;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& stage = spec.stages[i];
    const BlockSpec& b = stage.first;
    const std::string where = "stage " + std::to_string(i) + ": ";
    if (stage.repeat == 0) fail(where + "repeat count must be positive");
    if (b.in_channels != channels) {
      fail(where + "expects " + std::to_string(b.in_channels) + " input channels but receives " +
           std::to_string(channels));
    }
    if (b.out_channels == 0) fail(where + "out_channels must be positive");
    if (b.stride != 1 && b.stride != 2) fail(where + "stride must be 1 or 2");
    if ((b.in_channels != b.out_channels || b.stride != 1) && !b.projection) {
      fail(where + "a dimension-changing block needs a projection shortcut");
    }
    if (b.kind == BlockKind::kBottleneck && (b.out_channels % 4 != 0 || b.out_channels < 4)) {
      fail(where + "bottleneck out_channels must be a positive multiple of 4");
    }
    channels = b.out_channels;
  }
}

namespace {

BlockSpec block(BlockKind kind, std::size_t in, std::size_t out, std::size_t stride) {
  return BlockSpec{kind, in, out, stride, in != out || stride != 1};
}

}  // namespace

std::vector<std::string> mini_family() { return {"mini-d2", "mini-d4", "mini-d8", "mini-d16"}; }

ModelSpec mini_spec(std::string_view name) {
  ModelSpec spec;
  spec.name = std::string(name);
  spec.stem = StemSpec{8, 3, 1, 1, false};
  const auto basic = BlockKind::kBasic;
  const auto bottleneck = BlockKind::kBottleneck;
  if (name == "mini-d2") {
    spec.stages = {{block(basic, 8, 8, 1), 2}};
    spec.depth_rank = 1;
  } else if (name == "mini-d4") {
    spec.stages = {{block(basic, 8, 8, 1), 4}};
    spec.depth_rank = 2;
  } else if (name == "mini-d8") {
    spec.stages = {{block(basic, 8, 8, 1), 4}, {block(basic, 8, 16, 2), 4}};
    spec.depth_rank = 3;
  } else if (name == "mini-d16") {
    // 16 bottleneck blocks in the 3-4-6-3 arrangement of ResNet-50.
    spec.stages = {{block(bottleneck, 8, 16, 1), 3},
                   {block(bottleneck, 16, 32, 2), 4},
                   {block(bottleneck, 32, 64, 2), 6},
                   {block(bottleneck, 64, 128, 2), 3}};
    spec.depth_rank = 4;
  } else {
    throw ConfigError("unknown mini model '" + std::string(name) + "'");
  }
  validate(spec);
  return spec;
}

ModelSpec resnet_spec(int depth, bool conv_bias, std::size_t input_channels, std::size_t num_classes) {
  ModelSpec spec;
  spec.name = "resnet" + std::to_string(depth) + (conv_bias ? "-convbias" : "");
  spec.input_channels = input_channels;
  spec.num_classes = num_classes;
  spec.stem = StemSpec{64, 7, 2, 3, true};
  spec.conv_bias = conv_bias;
  std::vector<std::size_t> repeats;
  BlockKind kind = BlockKind::kBasic;
  std::size_t expansion = 1;
  switch (depth) {
    case 18: repeats = {2, 2, 2, 2}; spec.depth_rank = 1; break;
    case 34: repeats = {3, 4, 6, 3}; spec.depth_rank = 2; break;
    case 50: repeats = {3, 4, 6, 3}; kind = BlockKind::kBottleneck; expansion = 4; spec.depth_rank = 3; break;
    case 101: repeats = {3, 4, 23, 3}; kind = BlockKind::kBottleneck; expansion = 4; spec.depth_rank = 4; break;
    default: throw ConfigError("unsupported ResNet depth " + std::to_string(depth));
  }
  std::size_t in = 64;
  const std::size_t widths[4] = {64, 128, 256, 512};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t out = widths[i] * expansion;
    spec.stages.push_back({block(kind, in, out, i == 0 ? 1 : 2), repeats[i]});
    in = out;
  }
  validate(spec);
  return spec;
}

ModelSpec spec_by_name(std::string_view name) {
  if (name.starts_with("mini-")) return mini_spec(name);
  if (name.starts_with("resnet")) {
    std::string_view rest = name.substr(6);
    bool bias = false;
    if (rest.ends_with("-convbias")) {
      bias = true;
      rest.remove_suffix(9);
    }
    for (int depth : {18, 34, 50, 101}) {
      if (rest == std::to_string(depth)) return resnet_spec(depth, bias);
    }
  }
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Network

Network::Trace Network::forward_trainable(Tape& tape, Var input, Mode mode) {
  Trace trace;
  trace.params.reserve(params_.size());
  for (const NamedTensor& p : params_) trace.params.push_back(tape.leaf(p.value, true));
  BatchNormSlots bn{mode, buffers_, {}};
  if (mode == Mode::kTrain) bn.mutable_stats = buffers_;
  trace.logits = run(tape, trace.params, input, bn);
  return trace;
}

Var Network::forward(Tape& tape, Var input) const {
  std::vector<Var> params;
  params.reserve(params_.size());
  for (const NamedTensor& p : params_) params.push_back(tape.leaf(p.value, false));
  return run(tape, params, input, BatchNormSlots{Mode::kEval, buffers_, {}});
}

Tensor Network::logits(const Tensor& input) const {
  Tape tape;
  Var x = tape.leaf(input);
  return tape.value(forward(tape, x));
}

Var Network::batchnorm(Var x, Var gamma, Var beta, std::size_t mean_slot, const BatchNormSlots& bn) {
  if (bn.mode == Mode::kTrain) {
    return ops::batchnorm2d_train(x, gamma, beta, bn.mutable_stats[mean_slot].value,
                                  bn.mutable_stats[mean_slot + 1].value);
  }
  return ops::batchnorm2d_eval(x, gamma, beta, bn.stats[mean_slot].value,
                               bn.stats[mean_slot + 1].value);
}

std::size_t count_parameters(const Network& net) {
  std::size_t n = 0;
  for (const NamedTensor& p : net.parameters()) n += p.value.numel();
  return n;
}

LinearNet::LinearNet(std::size_t in_features, std::size_t num_classes, std::uint64_t init_seed) {
  Rng rng(init_seed);
  Tensor w({num_classes, in_features}, 0.0);
  const double sd = std::sqrt(2.0 / static_cast<double>(in_features));
  for (double& v : w.data) v = rng.normal(0.0, sd);
  params_.push_back({"fc.weight", std::move(w)});
  params_.push_back({"fc.bias", Tensor({num_classes}, 0.0)});
}

LinearNet::LinearNet(Tensor weight, Tensor bias) {
  if (weight.rank() != 2 || bias.shape != Shape{weight.dim(0)}) {
    throw ShapeError("LinearNet: weight " + shape_string(weight.shape) + " and bias " +
                     shape_string(bias.shape) + " are inconsistent");
  }
  params_.push_back({"fc.weight", std::move(weight)});
  params_.push_back({"fc.bias", std::move(bias)});
}

Var LinearNet::run(Tape&, std::span<const Var> params, Var input, const BatchNormSlots&) const {
  return ops::linear(ops::flatten(input), params[0], params[1]);
}

// ---------------------------------------------------------------------------
// Model

namespace {

// Shape-only walk shared by Model construction and parameter_layout().
class LayoutRecorder {
 public:
  explicit LayoutRecorder(bool conv_bias) : conv_bias_(conv_bias) {}

  std::size_t conv(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    const std::size_t w = push(prefix + ".weight", {out, in, k, k});
    if (conv_bias_) push(prefix + ".bias", {out});
    return w;
  }
  std::size_t bn(const std::string& prefix, std::size_t channels) {
    const std::size_t g = push(prefix + ".weight", {channels});
    push(prefix + ".bias", {channels});
    return g;
  }
  std::size_t push(std::string name, Shape shape) {
    shapes.push_back({std::move(name), std::move(shape)});
    return shapes.size() - 1;
  }

  std::vector<ParameterShape> shapes;

 private:
  bool conv_bias_;
};

void walk_layout(const ModelSpec& spec, LayoutRecorder& rec) {
  rec.conv("stem.conv", spec.input_channels, spec.stem.out_channels, spec.stem.kernel);
  rec.bn("stem.bn", spec.stem.out_channels);
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const StageSpec& stage = spec.stages[s];
    for (std::size_t r = 0; r < stage.repeat; ++r) {
      BlockSpec b = stage.first;
      if (r > 0) b = BlockSpec{b.kind, b.out_channels, b.out_channels, 1, false};
      const std::string pre = "stages." + std::to_string(s) + "." + std::to_string(r);
      if (b.kind == BlockKind::kBasic) {
        rec.conv(pre + ".conv1", b.in_channels, b.out_channels, 3);
        rec.bn(pre + ".bn1", b.out_channels);
        rec.conv(pre + ".conv2", b.out_channels, b.out_channels, 3);
        rec.bn(pre + ".bn2", b.out_channels);
      } else {
        const std::size_t mid = b.mid_channels();
        rec.conv(pre + ".conv1", b.in_channels, mid, 1);
        rec.bn(pre + ".bn1", mid);
        rec.conv(pre + ".conv2", mid, mid, 3);
        rec.bn(pre + ".bn2", mid);
        rec.conv(pre + ".conv3", mid, b.out_channels, 1);
        rec.bn(pre + ".bn3", b.out_channels);
      }
      if (b.projection) {
        rec.conv(pre + ".shortcut.conv", b.in_channels, b.out_channels, 1);
        rec.bn(pre + ".shortcut.bn", b.out_channels);
      }
    }
  }
  const std::size_t features = spec.stages.back().first.out_channels;
  rec.push("fc.weight", {spec.num_classes, features});
  rec.push("fc.bias", {spec.num_classes});
}

}  // namespace

std::vector<ParameterShape> parameter_layout(const ModelSpec& spec) {
  validate(spec);
  LayoutRecorder rec(spec.conv_bias);
  walk_layout(spec, rec);
  return std::move(rec.shapes);
}

std::size_t count_parameters(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const ParameterShape& p : parameter_layout(spec)) n += shape_numel(p.shape);
  return n;
}

Model::ConvRef Model::add_conv(const std::string& prefix, std::size_t in, std::size_t out,
                               std::size_t k, std::size_t stride, std::size_t pad) {
  ConvRef ref;
  ref.attrs = Conv2dAttrs{stride, pad};
  ref.weight = params_.size();
  params_.push_back({prefix + ".weight", Tensor({out, in, k, k}, 0.0)});
  if (spec_.conv_bias) {
    ref.bias = static_cast<std::ptrdiff_t>(params_.size());
    params_.push_back({prefix + ".bias", Tensor({out}, 0.0)});
  }
  return ref;
}

Model::BnRef Model::add_bn(const std::string& prefix, std::size_t channels) {
  BnRef ref;
  ref.gamma = params_.size();
  params_.push_back({prefix + ".weight", Tensor({channels}, 1.0)});
  ref.beta = params_.size();
  params_.push_back({prefix + ".bias", Tensor({channels}, 0.0)});
  ref.stats = buffers_.size();
  buffers_.push_back({prefix + ".running_mean", Tensor({channels}, 0.0)});
  buffers_.push_back({prefix + ".running_var", Tensor({channels}, 1.0)});
  return ref;
}

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  validate(spec_);
  const StemSpec& stem = spec_.stem;
  stem_conv_ = add_conv("stem.conv", spec_.input_channels, stem.out_channels, stem.kernel,
                        stem.stride, stem.padding);
  stem_bn_ = add_bn("stem.bn", stem.out_channels);
  for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
    const StageSpec& stage = spec_.stages[s];
    for (std::size_t r = 0; r < stage.repeat; ++r) {
      BlockSpec b = stage.first;
      if (r > 0) b = BlockSpec{b.kind, b.out_channels, b.out_channels, 1, false};
      const std::string pre = "stages." + std::to_string(s) + "." + std::to_string(r);
      BlockRef ref;
      ref.kind = b.kind;
      if (b.kind == BlockKind::kBasic) {
        ref.convs.push_back(add_conv(pre + ".conv1", b.in_channels, b.out_channels, 3, b.stride, 1));
        ref.bns.push_back(add_bn(pre + ".bn1", b.out_channels));
        ref.convs.push_back(add_conv(pre + ".conv2", b.out_channels, b.out_channels, 3, 1, 1));
        ref.bns.push_back(add_bn(pre + ".bn2", b.out_channels));
      } else {
        const std::size_t mid = b.mid_channels();
        ref.convs.push_back(add_conv(pre + ".conv1", b.in_channels, mid, 1, 1, 0));
        ref.bns.push_back(add_bn(pre + ".bn1", mid));
        ref.convs.push_back(add_conv(pre + ".conv2", mid, mid, 3, b.stride, 1));
        ref.bns.push_back(add_bn(pre + ".bn2", mid));
        ref.convs.push_back(add_conv(pre + ".conv3", mid, b.out_channels, 1, 1, 0));
        ref.bns.push_back(add_bn(pre + ".bn3", b.out_channels));
      }
      if (b.projection) {
        ref.projection = true;
        ref.proj = add_conv(pre + ".shortcut.conv", b.in_channels, b.out_channels, 1, b.stride, 0);
        ref.proj_bn = add_bn(pre + ".shortcut.bn", b.out_channels);
      }
      blocks_.push_back(std::move(ref));
    }
  }
  const std::size_t features = spec_.stages.back().first.out_channels;
  fc_weight_ = params_.size();
  params_.push_back({"fc.weight", Tensor({spec_.num_classes, features}, 0.0)});
  fc_bias_ = params_.size();
  params_.push_back({"fc.bias", Tensor({spec_.num_classes}, 0.0)});

  // He fan-in initialization of conv and linear weights, in construction order.
  Rng rng(init_seed);
  for (NamedTensor& p : params_) {
    if (p.value.rank() < 2) continue;
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < p.value.rank(); ++i) fan_in *= p.value.dim(i);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : p.value.data) v = rng.normal(0.0, sd);
  }
}

Var Model::apply_conv(Tape&, std::span<const Var> params, Var x, const ConvRef& c) const {
  std::optional<Var> bias;
  if (c.bias >= 0) bias = params[static_cast<std::size_t>(c.bias)];
  return ops::conv2d(x, params[c.weight], bias, c.attrs);
}

Var Model::apply_bn(std::span<const Var> params, Var x, const BnRef& b,
                    const BatchNormSlots& bn) const {
  return batchnorm(x, params[b.gamma], params[b.beta], b.stats, bn);
}

Var Model::run(Tape& tape, std::span<const Var> params, Var input, const BatchNormSlots& bn) const {
  const Tensor& in = tape.value(input);
  if (in.rank() != 4 || in.dim(1) != spec_.input_channels) {
    throw ShapeError("model '" + spec_.name + "' expects input [N," +
                     std::to_string(spec_.input_channels) + ",H,W], got " + shape_string(in.shape));
  }
  Var x = ops::relu(apply_bn(params, apply_conv(tape, params, input, stem_conv_), stem_bn_, bn));
  if (spec_.stem.max_pool) x = ops::max_pool2d(x, Pool2dAttrs{3, 2, 1});
  for (const BlockRef& b : blocks_) {
    Var out = x;
    const std::size_t last = b.convs.size() - 1;
    for (std::size_t i = 0; i < b.convs.size(); ++i) {
      out = apply_bn(params, apply_conv(tape, params, out, b.convs[i]), b.bns[i], bn);
      if (i != last) out = ops::relu(out);
    }
    Var shortcut = b.projection ? apply_bn(params, apply_conv(tape, params, x, b.proj), b.proj_bn, bn) : x;
    x = ops::relu(ops::add(out, shortcut));
  }
  return ops::linear(ops::global_avg_pool(x), params[fc_weight_], params[fc_bias_]);
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> all(params_.begin(), params_.end());
  all.insert(all.end(), buffers_.begin(), buffers_.end());
  return all;
}

void Model::load_state(std::span<const NamedTensor> state) {
  std::map<std::string_view, const Tensor*> by_name;
  for (const NamedTensor& t : state) {
    if (!by_name.emplace(t.name, &t.value).second) {
      throw FormatError("duplicate tensor '" + t.name + "' in model state");
    }
  }
  if (by_name.size() != params_.size() + buffers_.size()) {
    throw FormatError("model '" + spec_.name + "' has " +
                      std::to_string(params_.size() + buffers_.size()) + " tensors, state has " +
                      std::to_string(by_name.size()));
  }
  auto assign = [&](std::vector<NamedTensor>& dst) {
    for (NamedTensor& t : dst) {
      auto it = by_name.find(t.name);
      if (it == by_name.end()) throw FormatError("model state lacks tensor '" + t.name + "'");
      if (it->second->shape != t.value.shape) {
        throw ShapeError("tensor '" + t.name + "' has shape " + shape_string(it->second->shape) +
                         ", model expects " + shape_string(t.value.shape));
      }
      t.value = *it->second;
    }
  };
  assign(params_);
  assign(buffers_);
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t init_seed) {
  return std::make_unique<Model>(spec, init_seed);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::uint8_t> write_checkpoint(const Model& model, const CheckpointMeta& meta) {
  return encode_tensor_file(TensorFile{std::string(model.name()), model.state(), meta});
}

LoadedCheckpoint read_checkpoint(std::span<const std::uint8_t> bytes) {
  TensorFile file = decode_tensor_file(bytes);
  LoadedCheckpoint out;
  out.model = build_model(spec_by_name(file.name), 0);
  out.model->load_state(file.tensors);
  out.meta = file.meta;
  return out;
}

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta) {
  write_bytes(path, write_checkpoint(model, meta));
}

LoadedCheckpoint load_checkpoint(const std::string& path) { return read_checkpoint(read_bytes(path)); }

}  // namespace attreval
