// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "attreval/error.hpp"

namespace attreval {

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kConv2d: return "conv2d";
    case Primitive::kRelu: return "relu";
    case Primitive::kAdd: return "elementwise_add";
    case Primitive::kMul: return "elementwise_mul";
    case Primitive::kScale: return "scale";
    case Primitive::kSum: return "sum";
    case Primitive::kBatchNorm2d: return "batchnorm2d";
    case Primitive::kMaxPool2d: return "max_pool2d";
    case Primitive::kGlobalAvgPool: return "global_average_pool";
    case Primitive::kLinear: return "linear";
    case Primitive::kFlatten: return "flatten";
    case Primitive::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Primitive::kSelectSum: return "select_sum";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw StateError("tape was consumed by backward(); call reset() first");
  Node node;
  node.kind = Primitive::kLeaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::check_owned(Var v, std::string_view what) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw GraphError(std::string(what) + ": variable is not on this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "value");
  return nodes_[v.id].value;
}

Tensor Tape::grad(Var v) const {
  check_owned(v, "grad");
  const Node& node = nodes_[v.id];
  if (node.grad.data.empty()) return Tensor(node.value.shape, 0.0);
  return node.grad;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id].requires_grad;
}

Primitive Tape::kind(Var v) const {
  check_owned(v, "kind");
  return nodes_[v.id].kind;
}

std::span<const std::size_t> Tape::inputs(Var v) const {
  check_owned(v, "inputs");
  return nodes_[v.id].inputs;
}

Var Tape::record(Primitive kind, std::vector<std::size_t> inputs, Tensor value,
                 BackwardRule rule) {
  if (consumed_) throw StateError("tape was consumed by backward(); call reset() first");
#ifndef NDEBUG
  assert(value.all_finite() || !"non-finite value produced by primitive");
#endif
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (node.requires_grad) node.rule = std::move(rule);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.data.empty()) node.grad = Tensor(node.value.shape, 0.0);
  return node.grad;
}

void Tape::backward(Var output) {
  check_owned(output, "backward");
  if (consumed_) throw StateError("backward() called twice on the same tape");
  if (nodes_[output.id].value.numel() != 1) {
    throw ContractError("backward() needs a scalar output, got shape " +
                        shape_string(nodes_[output.id].value.shape));
  }
  for (Node& node : nodes_) node.grad = Tensor();
  grad_buffer(output.id).data[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.rule || node.grad.data.empty()) continue;
    // Copy: the rule may grow other gradient buffers but never this one.
    const Tensor upstream = node.grad;
    node.rule(*this, upstream);
  }
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

namespace ops {
namespace {

Tape& tape_of(std::initializer_list<Var> vars, std::string_view what) {
  Tape* tape = vars.begin()->tape;
  if (tape == nullptr) throw GraphError(std::string(what) + ": variable has no tape");
  for (Var v : vars) tape->check_owned(v, what);
  return *tape;
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view what, std::string_view arg) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": " + std::string(arg) + " must have rank " +
                     std::to_string(rank) + ", got shape " + shape_string(t.shape));
  }
}

// Output positions o in [lo, hi) whose input coordinate o*stride + k - pad lies
// inside [0, size).
struct Range {
  std::size_t lo, hi;
};
Range valid_range(std::size_t out_size, std::size_t in_size, std::size_t k, std::size_t stride,
                  std::size_t pad) {
  // need o*stride + k >= pad  and  o*stride + k - pad < in_size
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in_size + pad > k) hi = (in_size + pad - k - 1) / stride + 1;
  hi = std::min(hi, out_size);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, Conv2dAttrs attrs) {
  Tape& tape = bias ? tape_of({x, weight, *bias}, "conv2d") : tape_of({x, weight}, "conv2d");
  const Tensor& in = tape.value(x);
  const Tensor& w = tape.value(weight);
  require_rank(in, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (attrs.stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels but weight " +
                     shape_string(w.shape) + " expects " + std::to_string(w.dim(1)));
  }
  if (h + 2 * attrs.padding < kh || wd + 2 * attrs.padding < kw) {
    throw ShapeError("conv2d: kernel " + shape_string(w.shape) + " larger than padded input " +
                     shape_string(in.shape));
  }
  if (bias) {
    const Tensor& b = tape.value(*bias);
    if (b.rank() != 1 || b.dim(0) != o) {
      throw ShapeError("conv2d: bias shape " + shape_string(b.shape) + " does not match " +
                       std::to_string(o) + " output channels");
    }
  }
  const std::size_t s = attrs.stride, p = attrs.padding;
  const std::size_t oh = (h + 2 * p - kh) / s + 1;
  const std::size_t ow = (wd + 2 * p - kw) / s + 1;

  Tensor out({n, o, oh, ow}, 0.0);
  const double* wp = w.data.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* op = &out.at(b, oc, 0, 0);
      if (bias) {
        const double bv = tape.value(*bias)[oc];
        std::fill(op, op + oh * ow, bv);
      }
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* ip = &in.at(b, ic, 0, 0);
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const Range rows = valid_range(oh, h, ki, s, p);
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const Range cols = valid_range(ow, wd, kj, s, p);
            const double wv = wp[((oc * c + ic) * kh + ki) * kw + kj];
            for (std::size_t r = rows.lo; r < rows.hi; ++r) {
              const double* irow = ip + (r * s + ki - p) * wd;
              double* orow = op + r * ow;
              if (s == 1) {
                for (std::size_t q = cols.lo; q < cols.hi; ++q) orow[q] += wv * irow[q + kj - p];
              } else {
                for (std::size_t q = cols.lo; q < cols.hi; ++q) orow[q] += wv * irow[q * s + kj - p];
              }
            }
          }
        }
      }
    }
  }

  std::vector<std::size_t> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const std::size_t xid = x.id, wid = weight.id;
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  return tape.record(
      Primitive::kConv2d, std::move(inputs), std::move(out),
      [=](Tape& t, const Tensor& dout) {
        const Tensor& in = t.value(xid);
        const Tensor& w = t.value(wid);
        const double* wp = w.data.data();
        if (t.requires_grad(xid)) {
          Tensor& dx = t.grad_buffer(xid);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              const double* gp = &dout.at(b, oc, 0, 0);
              for (std::size_t ic = 0; ic < c; ++ic) {
                double* dp = &dx.at(b, ic, 0, 0);
                for (std::size_t ki = 0; ki < kh; ++ki) {
                  const Range rows = valid_range(oh, h, ki, s, p);
                  for (std::size_t kj = 0; kj < kw; ++kj) {
                    const Range cols = valid_range(ow, wd, kj, s, p);
                    const double wv = wp[((oc * c + ic) * kh + ki) * kw + kj];
                    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
                      double* drow = dp + (r * s + ki - p) * wd;
                      const double* grow = gp + r * ow;
                      if (s == 1) {
                        for (std::size_t q = cols.lo; q < cols.hi; ++q) drow[q + kj - p] += wv * grow[q];
                      } else {
                        for (std::size_t q = cols.lo; q < cols.hi; ++q) drow[q * s + kj - p] += wv * grow[q];
                      }
                    }
                  }
                }
              }
            }
          }
        }
        if (t.requires_grad(wid)) {
          Tensor& dw = t.grad_buffer(wid);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              const double* gp = &dout.at(b, oc, 0, 0);
              for (std::size_t ic = 0; ic < c; ++ic) {
                const double* ip = &in.at(b, ic, 0, 0);
                for (std::size_t ki = 0; ki < kh; ++ki) {
                  const Range rows = valid_range(oh, h, ki, s, p);
                  for (std::size_t kj = 0; kj < kw; ++kj) {
                    const Range cols = valid_range(ow, wd, kj, s, p);
                    double acc = 0.0;
                    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
                      const double* irow = ip + (r * s + ki - p) * wd;
                      const double* grow = gp + r * ow;
                      if (s == 1) {
                        for (std::size_t q = cols.lo; q < cols.hi; ++q) acc += irow[q + kj - p] * grow[q];
                      } else {
                        for (std::size_t q = cols.lo; q < cols.hi; ++q) acc += irow[q * s + kj - p] * grow[q];
                      }
                    }
                    dw.data[((oc * c + ic) * kh + ki) * kw + kj] += acc;
                  }
                }
              }
            }
          }
        }
        if (bid && t.requires_grad(*bid)) {
          Tensor& db = t.grad_buffer(*bid);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              const double* gp = &dout.at(b, oc, 0, 0);
              double acc = 0.0;
              for (std::size_t k = 0; k < oh * ow; ++k) acc += gp[k];
              db.data[oc] += acc;
            }
          }
        }
      });
}

Var relu(Var x) {
  Tape& tape = tape_of({x}, "relu");
  Tensor out = tape.value(x);
  for (double& v : out.data) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  const std::size_t xid = x.id;
  return tape.record(Primitive::kRelu, {xid}, std::move(out), [xid](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(xid);
    Tensor& dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < in.numel(); ++i) {
      if (in.data[i] > 0.0) dx.data[i] += g.data[i];
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of({a, b}, "elementwise_add");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape != bv.shape) {
    throw ShapeError("elementwise_add: shapes " + shape_string(av.shape) + " and " +
                     shape_string(bv.shape) + " differ");
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(Primitive::kAdd, {aid, bid}, std::move(out),
                     [aid, bid](Tape& t, const Tensor& g) {
                       for (std::size_t id : {aid, bid}) {
                         if (!t.requires_grad(id)) continue;
                         Tensor& d = t.grad_buffer(id);
                         for (std::size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i];
                       }
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of({a, b}, "elementwise_mul");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape != bv.shape) {
    throw ShapeError("elementwise_mul: shapes " + shape_string(av.shape) + " and " +
                     shape_string(bv.shape) + " differ");
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(Primitive::kMul, {aid, bid}, std::move(out),
                     [aid, bid](Tape& t, const Tensor& g) {
                       if (t.requires_grad(aid)) {
                         const Tensor& other = t.value(bid);
                         Tensor& d = t.grad_buffer(aid);
                         for (std::size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * other.data[i];
                       }
                       if (t.requires_grad(bid)) {
                         const Tensor& other = t.value(aid);
                         Tensor& d = t.grad_buffer(bid);
                         for (std::size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * other.data[i];
                       }
                     });
}

Var scale(Var a, double factor) {
  Tape& tape = tape_of({a}, "scale");
  Tensor out = tape.value(a);
  for (double& v : out.data) v *= factor;
  const std::size_t aid = a.id;
  return tape.record(Primitive::kScale, {aid}, std::move(out),
                     [aid, factor](Tape& t, const Tensor& g) {
                       Tensor& d = t.grad_buffer(aid);
                       for (std::size_t i = 0; i < g.numel(); ++i) d.data[i] += factor * g.data[i];
                     });
}

Var sum(Var a) {
  Tape& tape = tape_of({a}, "sum");
  double total = 0.0;
  for (double v : tape.value(a).data) total += v;
  const std::size_t aid = a.id;
  return tape.record(Primitive::kSum, {aid}, Tensor::scalar(total),
                     [aid](Tape& t, const Tensor& g) {
                       Tensor& d = t.grad_buffer(aid);
                       for (double& v : d.data) v += g.data[0];
                     });
}

namespace {

void check_bn_args(const Tensor& in, const Tensor& gamma, const Tensor& beta,
                   const Tensor& mean, const Tensor& var) {
  require_rank(in, 4, "batchnorm2d", "input");
  const std::size_t c = in.dim(1);
  if (gamma.shape != Shape{c} || beta.shape != Shape{c}) {
    throw ShapeError("batchnorm2d: scale/shift shapes " + shape_string(gamma.shape) + ", " +
                     shape_string(beta.shape) + " do not match " + std::to_string(c) + " channels");
  }
  if (mean.data.empty() || var.data.empty()) {
    throw StateError("batchnorm2d: running statistics are not populated");
  }
  if (mean.shape != Shape{c} || var.shape != Shape{c}) {
    throw ShapeError("batchnorm2d: running statistics shape " + shape_string(mean.shape) +
                     " does not match " + std::to_string(c) + " channels");
  }
}

}  // namespace

Var batchnorm2d_train(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                      BatchNormAttrs attrs) {
  Tape& tape = tape_of({x, gamma, beta}, "batchnorm2d");
  const Tensor& in = tape.value(x);
  const Tensor& g = tape.value(gamma);
  const Tensor& bt = tape.value(beta);
  check_bn_args(in, g, bt, running_mean, running_var);
  const std::size_t n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  const std::size_t count = n * plane;

  Tensor out(in.shape, 0.0);
  Tensor xhat(in.shape, 0.0);
  std::vector<double> invstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* p = &in.at(b, ch, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) mean += p[k];
    }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* p = &in.at(b, ch, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) var += (p[k] - mean) * (p[k] - mean);
    }
    const double biased = var / static_cast<double>(count);
    const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : biased;
    invstd[ch] = 1.0 / std::sqrt(biased + attrs.eps);
    for (std::size_t b = 0; b < n; ++b) {
      const double* p = &in.at(b, ch, 0, 0);
      double* xh = &xhat.at(b, ch, 0, 0);
      double* op = &out.at(b, ch, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) {
        xh[k] = (p[k] - mean) * invstd[ch];
        op[k] = g.data[ch] * xh[k] + bt.data[ch];
      }
    }
    running_mean.data[ch] = (1.0 - attrs.momentum) * running_mean.data[ch] + attrs.momentum * mean;
    running_var.data[ch] = (1.0 - attrs.momentum) * running_var.data[ch] + attrs.momentum * unbiased;
  }

  const std::size_t xid = x.id, gid = gamma.id, bid = beta.id;
  return tape.record(
      Primitive::kBatchNorm2d, {xid, gid, bid}, std::move(out),
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, const Tensor& dy) {
        const Tensor& gv = t.value(gid);
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* gp = &dy.at(b, ch, 0, 0);
            const double* xh = &xhat.at(b, ch, 0, 0);
            for (std::size_t k = 0; k < plane; ++k) {
              sum_dy[ch] += gp[k];
              sum_dy_xhat[ch] += gp[k] * xh[k];
            }
          }
        }
        if (t.requires_grad(gid)) {
          Tensor& d = t.grad_buffer(gid);
          for (std::size_t ch = 0; ch < c; ++ch) d.data[ch] += sum_dy_xhat[ch];
        }
        if (t.requires_grad(bid)) {
          Tensor& d = t.grad_buffer(bid);
          for (std::size_t ch = 0; ch < c; ++ch) d.data[ch] += sum_dy[ch];
        }
        if (t.requires_grad(xid)) {
          Tensor& dx = t.grad_buffer(xid);
          const double m = static_cast<double>(count);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double* gp = &dy.at(b, ch, 0, 0);
              const double* xh = &xhat.at(b, ch, 0, 0);
              double* dp = &dx.at(b, ch, 0, 0);
              const double k1 = gv.data[ch] * invstd[ch] / m;
              for (std::size_t k = 0; k < plane; ++k) {
                dp[k] += k1 * (m * gp[k] - sum_dy[ch] - xh[k] * sum_dy_xhat[ch]);
              }
            }
          }
        }
      });
}

Var batchnorm2d_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                     const Tensor& running_var, BatchNormAttrs attrs) {
  Tape& tape = tape_of({x, gamma, beta}, "batchnorm2d");
  const Tensor& in = tape.value(x);
  const Tensor& g = tape.value(gamma);
  const Tensor& bt = tape.value(beta);
  check_bn_args(in, g, bt, running_mean, running_var);
  const std::size_t n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);

  std::vector<double> invstd(c), mean(running_mean.data);
  for (std::size_t ch = 0; ch < c; ++ch) invstd[ch] = 1.0 / std::sqrt(running_var.data[ch] + attrs.eps);
  Tensor out(in.shape, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = &in.at(b, ch, 0, 0);
      double* op = &out.at(b, ch, 0, 0);
      const double k1 = g.data[ch] * invstd[ch];
      for (std::size_t k = 0; k < plane; ++k) op[k] = k1 * (p[k] - mean[ch]) + bt.data[ch];
    }
  }
  const std::size_t xid = x.id, gid = gamma.id, bid = beta.id;
  return tape.record(
      Primitive::kBatchNorm2d, {xid, gid, bid}, std::move(out),
      [=, invstd = std::move(invstd), mean = std::move(mean)](Tape& t, const Tensor& dy) {
        const Tensor& in = t.value(xid);
        const Tensor& gv = t.value(gid);
        const bool need_x = t.requires_grad(xid), need_g = t.requires_grad(gid),
                   need_b = t.requires_grad(bid);
        Tensor* dx = need_x ? &t.grad_buffer(xid) : nullptr;
        Tensor* dg = need_g ? &t.grad_buffer(gid) : nullptr;
        Tensor* db = need_b ? &t.grad_buffer(bid) : nullptr;
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* gp = &dy.at(b, ch, 0, 0);
            const double* p = &in.at(b, ch, 0, 0);
            double sdy = 0.0, sdyx = 0.0;
            for (std::size_t k = 0; k < plane; ++k) {
              sdy += gp[k];
              sdyx += gp[k] * (p[k] - mean[ch]) * invstd[ch];
            }
            if (dg) dg->data[ch] += sdyx;
            if (db) db->data[ch] += sdy;
            if (dx) {
              double* dp = &dx->at(b, ch, 0, 0);
              const double k1 = gv.data[ch] * invstd[ch];
              for (std::size_t k = 0; k < plane; ++k) dp[k] += k1 * gp[k];
            }
          }
        }
      });
}

Var max_pool2d(Var x, Pool2dAttrs attrs) {
  Tape& tape = tape_of({x}, "max_pool2d");
  const Tensor& in = tape.value(x);
  require_rank(in, 4, "max_pool2d", "input");
  if (attrs.kernel == 0 || attrs.stride == 0) throw ContractError("max_pool2d: kernel and stride must be positive");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t k = attrs.kernel, s = attrs.stride, p = attrs.padding;
  if (h + 2 * p < k || w + 2 * p < k) {
    throw ShapeError("max_pool2d: window larger than padded input " + shape_string(in.shape));
  }
  const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (w + 2 * p - k) / s + 1;
  Tensor out({n, c, oh, ow}, 0.0);
  std::vector<std::size_t> argmax(out.numel());
  std::size_t idx = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t q = 0; q < ow; ++q, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (std::size_t i = 0; i < k; ++i) {
            const std::size_t ir = r * s + i;
            if (ir < p || ir - p >= h) continue;
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t jc = q * s + j;
              if (jc < p || jc - p >= w) continue;
              const std::size_t flat = ((b * c + ch) * h + (ir - p)) * w + (jc - p);
              if (in.data[flat] > best) {
                best = in.data[flat];
                best_at = flat;
              }
            }
          }
          out.data[idx] = best;
          argmax[idx] = best_at;
        }
      }
    }
  }
  const std::size_t xid = x.id;
  return tape.record(Primitive::kMaxPool2d, {xid}, std::move(out),
                     [xid, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
                       Tensor& dx = t.grad_buffer(xid);
                       for (std::size_t i = 0; i < g.numel(); ++i) dx.data[argmax[i]] += g.data[i];
                     });
}

Var global_avg_pool(Var x) {
  Tape& tape = tape_of({x}, "global_average_pool");
  const Tensor& in = tape.value(x);
  require_rank(in, 4, "global_average_pool", "input");
  const std::size_t n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  Tensor out({n, c}, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = &in.at(b, ch, 0, 0);
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      out.data[b * c + ch] = acc / static_cast<double>(plane);
    }
  }
  const std::size_t xid = x.id;
  return tape.record(Primitive::kGlobalAvgPool, {xid}, std::move(out),
                     [xid, n, c, plane](Tape& t, const Tensor& g) {
                       Tensor& dx = t.grad_buffer(xid);
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t bc = 0; bc < n * c; ++bc) {
                         const double v = g.data[bc] * inv;
                         double* dp = dx.data.data() + bc * plane;
                         for (std::size_t k = 0; k < plane; ++k) dp[k] += v;
                       }
                     });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  Tape& tape = bias ? tape_of({x, weight, *bias}, "linear") : tape_of({x, weight}, "linear");
  const Tensor& in = tape.value(x);
  const Tensor& w = tape.value(weight);
  require_rank(in, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  const std::size_t n = in.dim(0), fin = in.dim(1), fout = w.dim(0);
  if (w.dim(1) != fin) {
    throw ShapeError("linear: input has " + std::to_string(fin) + " features but weight " +
                     shape_string(w.shape) + " expects " + std::to_string(w.dim(1)));
  }
  if (bias && tape.value(*bias).shape != Shape{fout}) {
    throw ShapeError("linear: bias shape " + shape_string(tape.value(*bias).shape) +
                     " does not match " + std::to_string(fout) + " outputs");
  }
  Tensor out({n, fout}, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < fout; ++o) {
      double acc = bias ? tape.value(*bias).data[o] : 0.0;
      const double* wr = &w.data[o * fin];
      const double* xr = &in.data[b * fin];
      for (std::size_t i = 0; i < fin; ++i) acc += wr[i] * xr[i];
      out.data[b * fout + o] = acc;
    }
  }
  std::vector<std::size_t> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const std::size_t xid = x.id, wid = weight.id;
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  return tape.record(Primitive::kLinear, std::move(inputs), std::move(out),
                     [=](Tape& t, const Tensor& g) {
                       const Tensor& in = t.value(xid);
                       const Tensor& w = t.value(wid);
                       if (t.requires_grad(xid)) {
                         Tensor& dx = t.grad_buffer(xid);
                         for (std::size_t b = 0; b < n; ++b) {
                           for (std::size_t o = 0; o < fout; ++o) {
                             const double gv = g.data[b * fout + o];
                             const double* wr = &w.data[o * fin];
                             double* dr = &dx.data[b * fin];
                             for (std::size_t i = 0; i < fin; ++i) dr[i] += gv * wr[i];
                           }
                         }
                       }
                       if (t.requires_grad(wid)) {
                         Tensor& dw = t.grad_buffer(wid);
                         for (std::size_t b = 0; b < n; ++b) {
                           for (std::size_t o = 0; o < fout; ++o) {
                             const double gv = g.data[b * fout + o];
                             const double* xr = &in.data[b * fin];
                             double* dr = &dw.data[o * fin];
                             for (std::size_t i = 0; i < fin; ++i) dr[i] += gv * xr[i];
                           }
                         }
                       }
                       if (bid && t.requires_grad(*bid)) {
                         Tensor& db = t.grad_buffer(*bid);
                         for (std::size_t b = 0; b < n; ++b) {
                           for (std::size_t o = 0; o < fout; ++o) db.data[o] += g.data[b * fout + o];
                         }
                       }
                     });
}

Var flatten(Var x) {
  Tape& tape = tape_of({x}, "flatten");
  const Tensor& in = tape.value(x);
  if (in.rank() < 1) throw ShapeError("flatten: input must have a batch dimension");
  const std::size_t n = in.dim(0);
  Tensor out({n, n == 0 ? 0 : in.numel() / n}, in.data);
  const std::size_t xid = x.id;
  return tape.record(Primitive::kFlatten, {xid}, std::move(out), [xid](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) dx.data[i] += g.data[i];
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = tape_of({logits}, "softmax_cross_entropy");
  const Tensor& z = tape.value(logits);
  require_rank(z, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(n));
  }
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  Tensor probs({n, k}, 0.0);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(labels[b]) +
                          " outside [0, " + std::to_string(k) + ")");
    }
    const double* zr = &z.data[b * k];
    const double zmax = *std::max_element(zr, zr + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(zr[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) probs.data[b * k + j] = std::exp(zr[j] - zmax) / denom;
    loss += -(zr[labels[b]] - zmax - std::log(denom));
  }
  loss /= static_cast<double>(n);
  std::vector<int> saved(labels.begin(), labels.end());
  const std::size_t zid = logits.id;
  return tape.record(Primitive::kSoftmaxCrossEntropy, {zid}, Tensor::scalar(loss),
                     [zid, n, k, probs = std::move(probs), saved = std::move(saved)](
                         Tape& t, const Tensor& g) {
                       Tensor& dz = t.grad_buffer(zid);
                       const double f = g.data[0] / static_cast<double>(n);
                       for (std::size_t b = 0; b < n; ++b) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double onehot = static_cast<int>(j) == saved[b] ? 1.0 : 0.0;
                           dz.data[b * k + j] += f * (probs.data[b * k + j] - onehot);
                         }
                       }
                     });
}

Var select_sum(Var logits, std::span<const int> classes) {
  Tape& tape = tape_of({logits}, "select_sum");
  const Tensor& z = tape.value(logits);
  require_rank(z, 2, "select_sum", "logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (classes.size() != n) {
    throw ShapeError("select_sum: " + std::to_string(classes.size()) + " classes for a batch of " +
                     std::to_string(n));
  }
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    if (classes[b] < 0 || static_cast<std::size_t>(classes[b]) >= k) {
      throw ContractError("select_sum: class " + std::to_string(classes[b]) + " outside [0, " +
                          std::to_string(k) + ")");
    }
    total += z.data[b * k + classes[b]];
  }
  std::vector<int> saved(classes.begin(), classes.end());
  const std::size_t zid = logits.id;
  return tape.record(Primitive::kSelectSum, {zid}, Tensor::scalar(total),
                     [zid, k, saved = std::move(saved)](Tape& t, const Tensor& g) {
                       Tensor& dz = t.grad_buffer(zid);
                       for (std::size_t b = 0; b < saved.size(); ++b) dz.data[b * k + saved[b]] += g.data[0];
                     });
}

}  // namespace ops

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
  Tensor grad(x.shape, 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double up = f(probe);
    probe.data[i] = orig - h;
    const double down = f(probe);
    probe.data[i] = orig;
    grad.data[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace attreval
