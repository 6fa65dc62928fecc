// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "attreval/error.hpp"
#include "attreval/image_io.hpp"
#include "attreval/rng.hpp"
#include "attreval/tensor_file.hpp"

namespace attreval {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kSaliency: return "saliency";
    case Method::kGradientShap: return "gradient_shap";
    case Method::kIntegratedGradients: return "integrated_gradients";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : all_methods()) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown attribution method '" + std::string(name) +
                    "' (expected saliency, gradient_shap or integrated_gradients)");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::kSaliency, Method::kGradientShap, Method::kIntegratedGradients};
  return m;
}

namespace {

void check_input(const Tensor& x, int c, const Network& model) {
  if (x.rank() != 3) throw ShapeError("attribution input must be [C,H,W], got " + shape_string(x.shape));
  if (c < 0 || static_cast<std::size_t>(c) >= model.num_classes()) {
    throw ContractError("class index " + std::to_string(c) + " out of range for " +
                        std::to_string(model.num_classes()) + " classes");
  }
}

Shape batched(const Shape& s, std::size_t n) { return {n, s[0], s[1], s[2]}; }

// Collapses channels of a [C,H,W] buffer by summation.
Tensor channel_sum(const std::vector<double>& v, const Shape& s) {
  Tensor out({s[1], s[2]}, 0.0);
  const std::size_t plane = s[1] * s[2];
  for (std::size_t ch = 0; ch < s[0]; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out.data[i] += v[ch * plane + i];
  }
  return out;
}

}  // namespace

std::vector<double> class_scores(const Network& model, const Tensor& batch, std::span<const int> classes) {
  const Tensor logits = model.logits(batch);
  const std::size_t k = logits.dim(1);
  if (classes.size() != logits.dim(0)) throw ContractError("class_scores: one class per batch row required");
  std::vector<double> out(classes.size());
  for (std::size_t n = 0; n < classes.size(); ++n) out[n] = logits.data[n * k + static_cast<std::size_t>(classes[n])];
  return out;
}

Tensor input_gradients(const Network& model, const Tensor& batch, std::span<const int> classes,
                       std::vector<double>* scores) {
  Tape tape;
  Var x = tape.leaf(batch, true);
  Var logits = model.forward(tape, x);
  if (scores) {
    const Tensor& z = tape.value(logits);
    const std::size_t k = z.dim(1);
    scores->resize(classes.size());
    for (std::size_t n = 0; n < classes.size(); ++n) {
      (*scores)[n] = z.data[n * k + static_cast<std::size_t>(classes[n])];
    }
  }
  // Rows do not interact in eval mode, so the gradient of the summed scores
  // is the per-row gradient.
  Var total = ops::select_sum(logits, classes);
  tape.backward(total);
  return tape.grad(x);
}

Tensor saliency(const Network& model, const Tensor& x, int c) {
  check_input(x, c, model);
  const int cls[1] = {c};
  const Tensor g = input_gradients(model, Tensor(batched(x.shape, 1), x.data), cls);
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor out({x.dim(1), x.dim(2)}, 0.0);
  for (std::size_t ch = 0; ch < x.dim(0); ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out.data[i] = std::max(out.data[i], std::abs(g.data[ch * plane + i]));
  }
  return out;
}

Tensor black_image(const Shape& shape, double mean, double std) {
  return Tensor(shape, (0.0 - mean) / std);
}

namespace {

// Sum over path points of grad S_c(b_k + alpha_k (x_k - b_k)) * (x_k - b_k),
// evaluated in chunks. `point` fills row data for index k.
struct PathPoint {
  const Tensor* start;   // baseline
  const Tensor* end;     // (possibly perturbed) input
  double alpha;
};

std::vector<double> accumulate_path(const Network& model, int c, const Shape& s,
                                    const std::vector<PathPoint>& points, std::size_t chunk) {
  const std::size_t per = shape_numel(s);
  std::vector<double> acc(per, 0.0);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < points.size(); start += chunk) {
    const std::size_t n = std::min(chunk, points.size() - start);
    Tensor batch(batched(s, n), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const PathPoint& p = points[start + r];
      double* row = &batch.data[r * per];
      for (std::size_t i = 0; i < per; ++i) {
        row[i] = p.start->data[i] + p.alpha * (p.end->data[i] - p.start->data[i]);
      }
    }
    const std::vector<int> cls(n, c);
    const Tensor g = input_gradients(model, batch, cls);
    for (std::size_t r = 0; r < n; ++r) {
      const PathPoint& p = points[start + r];
      const double* gr = &g.data[r * per];
      for (std::size_t i = 0; i < per; ++i) acc[i] += gr[i] * (p.end->data[i] - p.start->data[i]);
    }
  }
  return acc;
}

}  // namespace

IGResult integrated_gradients(const Network& model, const Tensor& x, int c, const IGConfig& config) {
  check_input(x, c, model);
  if (config.steps == 0) throw ConfigError("integrated gradients needs at least one step");
  const Tensor baseline = config.baseline ? *config.baseline : black_image(x.shape, 0.5, 0.5);
  if (baseline.shape != x.shape) {
    throw ContractError("baseline shape " + shape_string(baseline.shape) + " does not match input " +
                        shape_string(x.shape));
  }
  const double m = static_cast<double>(config.steps);
  std::vector<PathPoint> points;
  points.reserve(config.steps);
  for (std::size_t k = 1; k <= config.steps; ++k) {
    points.push_back({&baseline, &x, (static_cast<double>(k) - 0.5) / m});
  }
  std::vector<double> acc = accumulate_path(model, c, x.shape, points, config.chunk);
  for (double& v : acc) v /= m;

  IGResult result;
  result.values = channel_sum(acc, x.shape);
  Tensor ends(batched(x.shape, 2), 0.0);
  std::copy(x.data.begin(), x.data.end(), ends.data.begin());
  std::copy(baseline.data.begin(), baseline.data.end(), ends.data.begin() + static_cast<std::ptrdiff_t>(x.numel()));
  const int cls[2] = {c, c};
  const std::vector<double> s = class_scores(model, ends, cls);
  result.score_delta = s[0] - s[1];
  double total = 0.0;
  for (double v : result.values.data) total += v;
  result.gap = std::abs(total - result.score_delta);
  return result;
}

Tensor gradient_shap(const Network& model, const Tensor& x, int c, const GSConfig& config) {
  check_input(x, c, model);
  if (config.baselines.empty()) throw ConfigError("gradient_shap: the baseline set is empty");
  if (config.samples == 0) throw ConfigError("gradient_shap: samples must be at least 1");
  if (!(config.sigma >= 0.0)) throw ConfigError("gradient_shap: noise sigma must be nonnegative");
  for (const Tensor& b : config.baselines) {
    if (b.shape != x.shape) {
      throw ContractError("gradient_shap baseline shape " + shape_string(b.shape) + " does not match input " +
                          shape_string(x.shape));
    }
  }
  Rng rng(config.seed);
  std::vector<Tensor> noisy;
  noisy.reserve(config.samples);
  std::vector<PathPoint> points;
  points.reserve(config.samples);
  const double m = static_cast<double>(config.samples);
  for (std::size_t k = 0; k < config.samples; ++k) {
    const std::size_t bi = config.baselines.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(config.baselines.size()));
    const double alpha = config.stratified_alpha ? (static_cast<double>(k) + 0.5) / m : rng.uniform();
    Tensor xt = x;
    if (config.sigma > 0.0) {
      for (double& v : xt.data) v += config.sigma * rng.normal();
    }
    noisy.push_back(std::move(xt));
    points.push_back({&config.baselines[bi], nullptr, alpha});
  }
  for (std::size_t k = 0; k < points.size(); ++k) points[k].end = &noisy[k];
  std::vector<double> acc = accumulate_path(model, c, x.shape, points, config.chunk);
  for (double& v : acc) v /= m;
  return channel_sum(acc, x.shape);
}

std::vector<double> shapley_exact(std::size_t players, const CoalitionFunction& f) {
  if (players == 0) return {};
  if (players > kMaxShapleyPlayers) {
    throw ContractError("shapley_exact enumerates 2^n coalitions; " + std::to_string(players) +
                        " players exceeds the limit of " + std::to_string(kMaxShapleyPlayers));
  }
  const std::uint32_t full = 1u << players;
  std::vector<double> value(full);
  for (std::uint32_t s = 0; s < full; ++s) value[s] = f(s);
  // weight(|S|) = |S|! (n - |S| - 1)! / n!
  std::vector<double> weight(players);
  for (std::size_t k = 0; k < players; ++k) {
    double w = 1.0 / static_cast<double>(players);
    // 1 / (n * C(n-1, k))
    for (std::size_t j = 1; j <= k; ++j) w *= static_cast<double>(j) / static_cast<double>(players - j);
    weight[k] = w;
  }
  std::vector<double> phi(players, 0.0);
  for (std::size_t i = 0; i < players; ++i) {
    const std::uint32_t bit = 1u << i;
    for (std::uint32_t s = 0; s < full; ++s) {
      if (s & bit) continue;
      phi[i] += weight[static_cast<std::size_t>(__builtin_popcount(s))] * (value[s | bit] - value[s]);
    }
  }
  return phi;
}

std::vector<double> shapley_exact(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  const Tensor& baseline, std::span<const std::size_t> partition) {
  if (baseline.shape != x.shape) throw ContractError("shapley_exact: baseline and input shapes differ");
  if (partition.size() != x.numel()) throw ContractError("shapley_exact: partition must label every element");
  std::size_t players = 0;
  for (std::size_t g : partition) players = std::max(players, g + 1);
  if (players > kMaxShapleyPlayers) {
    throw ContractError("shapley_exact: " + std::to_string(players) + " features exceeds the limit of " +
                        std::to_string(kMaxShapleyPlayers));
  }
  return shapley_exact(players, [&](std::uint32_t coalition) {
    Tensor masked = baseline;
    for (std::size_t i = 0; i < partition.size(); ++i) {
      if (coalition & (1u << partition[i])) masked.data[i] = x.data[i];
    }
    return f(masked);
  });
}

std::vector<std::size_t> grid_partition(std::size_t channels, std::size_t height, std::size_t width,
                                        std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0 || rows > height || cols > width) {
    throw ContractError("grid_partition: grid must fit inside the image");
  }
  std::vector<std::size_t> out(channels * height * width);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        out[(ch * height + r) * width + c] = (r * rows / height) * cols + (c * cols / width);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> heatmap_rgb(const Tensor& values) {
  double peak = 0.0;
  for (double v : values.data) peak = std::max(peak, std::abs(v));
  std::vector<std::uint8_t> rgb;
  rgb.reserve(values.numel() * 3);
  for (double v : values.data) {
    const double t = peak > 0.0 ? std::clamp(v / peak, -1.0, 1.0) : 0.0;
    double r = 128.0, g = 128.0, b = 128.0;
    if (t > 0.0) {
      r = 128.0 + 127.0 * t;
      g = 128.0 * (1.0 - t);
      b = 128.0 * (1.0 - t);
    } else if (t < 0.0) {
      r = 128.0 * (1.0 + t);
      g = 128.0 * (1.0 + t);
      b = 128.0 - 127.0 * t;
    }
    rgb.push_back(static_cast<std::uint8_t>(std::lround(r)));
    rgb.push_back(static_cast<std::uint8_t>(std::lround(g)));
    rgb.push_back(static_cast<std::uint8_t>(std::lround(b)));
  }
  return rgb;
}

void write_heatmap(const std::string& path, const Tensor& values) {
  if (values.rank() != 2) throw ShapeError("heatmap needs an [H,W] map, got " + shape_string(values.shape));
  write_ppm(path, values.dim(1), values.dim(0), heatmap_rgb(values));
}

namespace {
constexpr char kSep = '\t';
}

void save_attributions(const std::string& path, std::span<const AttributionMap> maps, std::uint64_t seed) {
  TensorFile file;
  if (!maps.empty()) {
    file.name = "attributions" + std::string(1, kSep) + maps[0].model_id + kSep + std::string(method_name(maps[0].method));
  } else {
    file.name = "attributions";
  }
  for (const AttributionMap& m : maps) {
    if (m.model_id != maps[0].model_id || m.method != maps[0].method) {
      throw ContractError("an attribution file holds one model and one method");
    }
    file.tensors.push_back({m.sample_id + kSep + std::to_string(m.class_index), m.values});
  }
  file.meta.seed = seed;
  write_bytes(path, encode_tensor_file(file));
}

std::vector<AttributionMap> load_attributions(const std::string& path) {
  const TensorFile file = decode_tensor_file(read_bytes(path));
  std::vector<AttributionMap> out;
  if (file.tensors.empty()) return out;
  const std::size_t a = file.name.find(kSep);
  const std::size_t b = file.name.rfind(kSep);
  if (a == std::string::npos || a == b || file.name.substr(0, a) != "attributions") {
    throw FormatError(path + ": not an attribution file");
  }
  const std::string model = file.name.substr(a + 1, b - a - 1);
  const Method method = parse_method(file.name.substr(b + 1));
  for (const NamedTensor& t : file.tensors) {
    const std::size_t s = t.name.rfind(kSep);
    if (s == std::string::npos) throw FormatError(path + ": malformed attribution entry '" + t.name + "'");
    AttributionMap m;
    m.sample_id = t.name.substr(0, s);
    m.model_id = model;
    m.method = method;
    m.class_index = std::stoi(t.name.substr(s + 1));
    m.values = t.value;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace attreval
