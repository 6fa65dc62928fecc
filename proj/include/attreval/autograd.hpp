// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over a linear tape of dense f64 primitives.
//
// Every primitive appends a node holding its output value. When at least one
// input requires a gradient, the node also carries a backward rule together
// with whatever activations that rule needs. Tape::backward walks the nodes in
// reverse order once and leaves d(output)/d(leaf) readable for each leaf that
// was created with requires_grad. A tape and its variables belong to a single
// thread; independent tapes can run concurrently.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "attreval/tensor.hpp"

namespace attreval {

enum class Primitive {
  kLeaf,
  kConv2d,
  kRelu,
  kAdd,
  kMul,
  kScale,
  kSum,
  kBatchNorm2d,
  kMaxPool2d,
  kGlobalAvgPool,
  kLinear,
  kFlatten,
  kSoftmaxCrossEntropy,
  kSelectSum,
};

std::string_view primitive_name(Primitive kind);

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  using BackwardRule = std::function<void(Tape&, const Tensor& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(Var v) const;
  // Gradient accumulated by the last backward call; zeros when nothing reached v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  Primitive kind(Var v) const;
  std::span<const std::size_t> inputs(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Propagates d(output)/d(node) to every node that requires a gradient. The
  // output must be a single-element tensor recorded on this tape. Afterwards
  // the tape is consumed: gradients stay readable, new primitives and further
  // backward calls are rejected until reset().
  void backward(Var output);
  void reset();

  // Primitive plumbing.
  Var record(Primitive kind, std::vector<std::size_t> inputs, Tensor value, BackwardRule rule);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  // Lazily allocated gradient accumulator for node id.
  Tensor& grad_buffer(std::size_t id);
  void check_owned(Var v, std::string_view what) const;

 private:
  struct Node {
    Primitive kind = Primitive::kLeaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardRule rule;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct Pool2dAttrs {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

struct BatchNormAttrs {
  double momentum = 0.1;
  double eps = 1e-5;
};

namespace ops {

// x [N,C,H,W], weight [O,C,KH,KW], optional bias [O] -> [N,O,OH,OW].
Var conv2d(Var x, Var weight, std::optional<Var> bias, Conv2dAttrs attrs);
Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);

// Train mode: normalizes with batch statistics and folds them into the running
// statistics with the configured momentum (unbiased variance, as the usual
// frameworks do).
Var batchnorm2d_train(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                      BatchNormAttrs attrs = {});
// Eval mode: running statistics are constants; gradients flow through the
// affine scale/shift and the input only.
Var batchnorm2d_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                     const Tensor& running_var, BatchNormAttrs attrs = {});

Var max_pool2d(Var x, Pool2dAttrs attrs);
Var global_avg_pool(Var x);
// x [N,in], weight [out,in], optional bias [out] -> [N,out].
Var linear(Var x, Var weight, std::optional<Var> bias);
Var flatten(Var x);
// Mean cross-entropy of softmax(logits [N,K]) against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// sum_n logits[n, classes[n]].
Var select_sum(Var logits, std::span<const int> classes);

}  // namespace ops

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

}  // namespace attreval
