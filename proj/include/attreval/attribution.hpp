// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Gradient-based explanations of a class logit: saliency, integrated
// gradients, GradientShap, and an exhaustive Shapley oracle over super-features.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attreval/models.hpp"
#include "attreval/tensor.hpp"

namespace attreval {

enum class Method { kSaliency, kGradientShap, kIntegratedGradients };

std::string_view method_name(Method m);  // "saliency", "gradient_shap", "integrated_gradients"
Method parse_method(std::string_view name);  // ConfigError on unknown names
const std::vector<Method>& all_methods();

struct AttributionMap {
  std::string sample_id;
  std::string model_id;
  Method method = Method::kSaliency;
  int class_index = 0;
  Tensor values;  // [H, W]
};

// Pre-softmax logits of a batch [N, C, H, W] in eval mode.
std::vector<double> class_scores(const Network& model, const Tensor& batch, std::span<const int> classes);

// d S_{c_n}(x_n) / d x_n for every row of the batch, in one backward pass.
// `scores`, when given, receives S_{c_n}(x_n).
Tensor input_gradients(const Network& model, const Tensor& batch, std::span<const int> classes,
                       std::vector<double>* scores = nullptr);

// |dS_c/dx|, maximum over channels. x is [C, H, W].
Tensor saliency(const Network& model, const Tensor& x, int c);

struct IGConfig {
  std::size_t steps = 64;
  std::optional<Tensor> baseline;  // [C, H, W]; all-black when unset
  std::size_t chunk = 32;          // path points per forward/backward pass
};

struct IGResult {
  Tensor values;             // [H, W], channel-summed
  double score_delta = 0.0;  // S_c(x) - S_c(x')
  double gap = 0.0;          // |sum(values) - score_delta|
};

// Midpoint rule over m steps along the straight path from the baseline.
IGResult integrated_gradients(const Network& model, const Tensor& x, int c, const IGConfig& config);

struct GSConfig {
  std::size_t samples = 64;
  double sigma = 0.1;
  std::vector<Tensor> baselines;  // each [C, H, W]
  std::uint64_t seed = 0;
  // alpha_k = (k - 0.5) / samples instead of U(0,1) draws.
  bool stratified_alpha = false;
  std::size_t chunk = 32;
};

// Mean over samples of grad S_c(b + alpha (x~ - b)) * (x~ - b), channel-summed.
Tensor gradient_shap(const Network& model, const Tensor& x, int c, const GSConfig& config);

// Normalized value of a black pixel for the given preprocessing.
Tensor black_image(const Shape& shape, double mean, double std);

// Shapley values of a set function over n <= 12 players. f receives a bitmask
// of the players present.
using CoalitionFunction = std::function<double(std::uint32_t coalition)>;
std::vector<double> shapley_exact(std::size_t players, const CoalitionFunction& f);

// Masking game: players are the groups of `partition` (one group id per
// element of x); absent groups take their baseline values.
std::vector<double> shapley_exact(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  const Tensor& baseline, std::span<const std::size_t> partition);

// Group ids for a [channels, height, width] input split into a rows x cols grid.
std::vector<std::size_t> grid_partition(std::size_t channels, std::size_t height, std::size_t width,
                                        std::size_t rows, std::size_t cols);

inline constexpr std::size_t kMaxShapleyPlayers = 12;

// Diverging colours: zero is mid-gray, +max red, -max blue.
std::vector<std::uint8_t> heatmap_rgb(const Tensor& values);
void write_heatmap(const std::string& path, const Tensor& values);

// Attribution sets share the tensor container used for checkpoints.
void save_attributions(const std::string& path, std::span<const AttributionMap> maps, std::uint64_t seed);
std::vector<AttributionMap> load_attributions(const std::string& path);

}  // namespace attreval
