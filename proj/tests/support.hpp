// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Oracles shared by the unit tests and the acceptance runner. Nothing here
// calls back into the code under test except to evaluate forward values.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "attreval/autograd.hpp"
#include "attreval/data.hpp"
#include "attreval/models.hpp"
#include "attreval/tensor.hpp"

namespace attreval::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape, 0.0);
  for (double& v : t.data) v = u(gen);
  return t;
}

// ||a - b||_inf / ||b||_inf, with b the finite-difference reference.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

// Builds a scalar on a fresh tape from leaves holding `inputs`.
using ScalarGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

// Reverse-mode gradients of `graph` against central differences with step h,
// over every coordinate (or `max_coords` seeded picks per input).
inline GradCheck check_gradients(const ScalarGraph& graph, const std::vector<Tensor>& inputs, double h = 1e-5,
                                 std::size_t max_coords = 0, std::uint64_t seed = 1) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
  tape.backward(graph(tape, leaves));

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const Tensor& x : xs) vs.push_back(t.leaf(x, false));
    return t.value(graph(t, vs))[0];
  };

  GradCheck out;
  std::mt19937_64 gen(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(leaves[k]);
    std::vector<std::size_t> coords(inputs[k].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords > 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), gen);
      coords.resize(max_coords);
    }
    std::vector<double> a, f;
    std::vector<Tensor> xs = inputs;
    for (std::size_t i : coords) {
      const double orig = xs[k].data[i];
      xs[k].data[i] = orig + h;
      const double up = eval(xs);
      xs[k].data[i] = orig - h;
      const double down = eval(xs);
      xs[k].data[i] = orig;
      f.push_back((up - down) / (2.0 * h));
      a.push_back(analytic.data[i]);
    }
    out.max_relative_error = std::max(out.max_relative_error, relative_error(a, f));
    out.coordinates += coords.size();
  }
  return out;
}

// sum(y * r) with a fixed random r, so every output coordinate is exercised.
inline Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const Tensor r = random_tensor(tape.value(y).shape, gen, 0.5, 1.5);
  return ops::sum(ops::mul(y, tape.leaf(r)));
}

// Parameter and input gradients of the mean cross-entropy through a whole
// network, every `stride`-th parameter coordinate and every third input pixel.
inline double model_gradient_error(const Model& model, const Tensor& x, const std::vector<int>& labels, Mode mode,
                            std::size_t stride, double h = 1e-5) {
  Tape tape;
  Var xv = tape.leaf(x, true);
  Model scratch = model;
  auto trace = scratch.forward_trainable(tape, xv, mode);
  tape.backward(ops::softmax_cross_entropy(trace.logits, labels));
  auto loss = [&](const Model& m, const Tensor& input) {
    Model c = m;
    Tape t;
    auto tr = c.forward_trainable(t, t.leaf(input), mode);
    return t.value(ops::softmax_cross_entropy(tr.logits, labels))[0];
  };
  std::vector<double> a, f;
  for (std::size_t pi = 0; pi < model.parameters().size(); ++pi) {
    const Tensor g = tape.grad(trace.params[pi]);
    for (std::size_t k = pi % stride; k < g.numel(); k += stride) {
      Model up = model, down = model;
      up.parameters()[pi].value.data[k] += h;
      down.parameters()[pi].value.data[k] -= h;
      a.push_back(g.data[k]);
      f.push_back((loss(up, x) - loss(down, x)) / (2.0 * h));
    }
  }
  const Tensor gx = tape.grad(xv);
  for (std::size_t k = 0; k < x.numel(); k += 3) {
    Tensor up = x, down = x;
    up.data[k] += h;
    down.data[k] -= h;
    a.push_back(gx.data[k]);
    f.push_back((loss(model, up) - loss(model, down)) / (2.0 * h));
  }
  return relative_error(a, f);
}

// RRA by definition: a pixel is in the top K when fewer than K pixels
// beat it, where "beat" is a larger value or an equal value at a lower index.
inline double brute_force_rra(const std::vector<double>& v, const Mask& mask) {
  const std::size_t k = mask.count();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] > v[i] || (v[j] == v[i] && j < i)) ++better;
    }
    if (better < k && mask.bits[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(k);
}

inline double brute_force_par(const std::vector<double>& v, const Mask& mask, bool* degenerate = nullptr) {
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) {
      total += v[i];
      if (mask.bits[i]) inside += v[i];
    }
  }
  if (degenerate) *degenerate = total == 0.0;
  return total == 0.0 ? 0.0 : inside / total;
}

// phi_i = mean over all n! orders of f(S_before + i) - f(S_before).
inline std::vector<double> permutation_shapley(std::size_t n, const std::function<double(std::uint32_t)>& f) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> phi(n, 0.0);
  std::size_t count = 0;
  do {
    std::uint32_t s = 0;
    for (std::size_t i : order) {
      const double before = f(s);
      s |= 1u << i;
      phi[i] += f(s) - before;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& v : phi) v /= static_cast<double>(count);
  return phi;
}

// Trainable parameters from first principles: conv k*k*in*out (+out with
// bias), batchnorm 2*ch, linear in*out+out.
inline std::size_t resnet_parameters_by_hand(int depth, bool conv_bias) {
  const std::size_t b = conv_bias ? 1 : 0;
  auto conv = [&](std::size_t k, std::size_t in, std::size_t out) { return k * k * in * out + b * out; };
  auto bn = [](std::size_t ch) { return 2 * ch; };
  std::size_t total = conv(7, 1, 64) + bn(64);
  const bool bottleneck = depth >= 50;
  std::vector<std::size_t> repeats;
  if (depth == 18) repeats = {2, 2, 2, 2};
  if (depth == 34 || depth == 50) repeats = {3, 4, 6, 3};
  if (depth == 101) repeats = {3, 4, 23, 3};
  const std::size_t widths[4] = {64, 128, 256, 512};
  std::size_t in = 64;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t mid = widths[s];
    const std::size_t out = bottleneck ? mid * 4 : mid;
    for (std::size_t r = 0; r < repeats[s]; ++r) {
      if (bottleneck) {
        total += conv(1, in, mid) + bn(mid) + conv(3, mid, mid) + bn(mid) + conv(1, mid, out) + bn(out);
      } else {
        total += conv(3, in, mid) + bn(mid) + conv(3, mid, mid) + bn(mid);
      }
      if (r == 0 && (in != out || s > 0)) total += conv(1, in, out) + bn(out);
      in = out;
    }
  }
  return total + in * 2 + 2;
}

}  // namespace attreval::testing
