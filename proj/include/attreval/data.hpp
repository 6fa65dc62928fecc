// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "attreval/image_io.hpp"
#include "attreval/tensor.hpp"

namespace attreval {

inline constexpr int kHealthy = 0;
inline constexpr int kDiseased = 1;

std::string class_name(int label);  // "healthy" / "diseased"

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
};

struct Sample {
  std::string id;
  Tensor image;  // [1, H, W], normalized
  Mask mask;     // ground-truth relevant pixels
  int label = kHealthy;
};

struct Preprocess {
  std::size_t height = 32;
  std::size_t width = 32;
  double mean = 0.5;
  double std = 0.5;
};

struct ManifestRow {
  std::string image;
  std::string mask;
  int label = kHealthy;
};

struct DatasetManifest {
  std::string root;  // directory that relative paths resolve against
  std::vector<ManifestRow> rows;
  Preprocess preprocess;
};

// CSV with header `image,mask,label`.
DatasetManifest read_manifest(const std::string& path, const Preprocess& preprocess = {});
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

// Bilinear resampling with half-pixel centres; identity when sizes match.
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w);
// Nearest-neighbour: source index floor(dst * in / out).
Mask resize_nearest(const Mask& src, std::size_t out_h, std::size_t out_w);

// Scale to [0,1], resize, normalize as (v - mean) / std.
Tensor preprocess_image(const GrayImage& image, const Preprocess& pre);
// Nonzero -> 1, nearest resize, re-binarize.
Mask preprocess_mask(const GrayImage& mask, const Preprocess& pre);

// Decodes every row. Undecodable files raise IngestError; samples whose mask
// is empty after resizing are skipped and reported in `warnings`.
std::vector<Sample> load_dataset(const DatasetManifest& manifest,
                                 std::vector<std::string>* warnings = nullptr);

struct SplitFractions {
  double train = 0.70;
  double val = 0.20;
  double test = 0.10;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle; boundaries at floor(cumulative fraction * n), remainder to test.
SplitIndices split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

struct DatasetSplit {
  std::vector<Sample> train, val, test;
};

DatasetSplit split_dataset(const std::vector<Sample>& samples, const SplitFractions& fractions,
                           std::uint64_t seed);

struct SyntheticConfig {
  std::size_t diseased = 400;
  std::size_t healthy = 200;
  std::size_t side = 32;
  // Lung ellipses, as fractions of the side: centres (x, y) and semi-axes.
  std::array<double, 2> lung_center_x{0.30, 0.70};
  double lung_center_y = 0.50;
  double lung_semi_x = 0.16;
  double lung_semi_y = 0.34;
  std::size_t blobs_min = 1;
  std::size_t blobs_max = 3;
  double blob_radius_min = 1.5;  // pixels
  double blob_radius_max = 3.0;
  double background_level = 0.55;
  double lung_level = 0.25;
  double blob_level = 0.90;
  double noise = 0.05;
  std::uint64_t seed = 42;
};

struct RawSample {
  std::string id;
  GrayImage image;
  Mask mask;
  Mask lungs;
  int label = kHealthy;
};

// 8-bit images as written to disk by gen-data; fully determined by the config.
std::vector<RawSample> generate_synthetic_raw(const SyntheticConfig& config);
std::vector<Sample> generate_synthetic(const SyntheticConfig& config, const Preprocess& pre = {});

}  // namespace attreval
