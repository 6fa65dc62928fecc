// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attreval/error.hpp"
#include "attreval/rng.hpp"

namespace attreval {

namespace fs = std::filesystem;

std::string class_name(int label) { return label == kDiseased ? "diseased" : "healthy"; }

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

DatasetManifest read_manifest(const std::string& path, const Preprocess& preprocess) {
  std::ifstream in(path);
  if (!in) throw IngestError("manifest '" + path + "': cannot open");
  DatasetManifest manifest;
  manifest.root = fs::path(path).parent_path().string();
  manifest.preprocess = preprocess;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (!header_seen) {
      if (cells != std::vector<std::string>{"image", "mask", "label"}) {
        throw IngestError("manifest '" + path + "': header must be 'image,mask,label'");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 3) {
      throw IngestError("manifest '" + path + "' line " + std::to_string(line_no) + ": expected 3 columns");
    }
    ManifestRow row{cells[0], cells[1], 0};
    if (cells[2] == "0") {
      row.label = kHealthy;
    } else if (cells[2] == "1") {
      row.label = kDiseased;
    } else {
      throw IngestError("manifest '" + path + "' line " + std::to_string(line_no) +
                        ": label must be 0 or 1, got '" + cells[2] + "'");
    }
    manifest.rows.push_back(std::move(row));
  }
  if (!header_seen) throw IngestError("manifest '" + path + "': missing header");
  return manifest;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "image,mask,label\n";
  for (const ManifestRow& r : rows) out << r.image << ',' << r.mask << ',' << r.label << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Preprocessing

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w) {
  if (src.size() != h * w) throw ShapeError("resize_bilinear: buffer does not match dimensions");
  if (h == out_h && w == out_w) return src;
  std::vector<double> out(out_h * out_w);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
      const double bottom = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
      out[r * out_w + c] = top * (1 - wy) + bottom * wy;
    }
  }
  return out;
}

Mask resize_nearest(const Mask& src, std::size_t out_h, std::size_t out_w) {
  Mask out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const std::size_t sr = r * src.height / out_h;
    for (std::size_t c = 0; c < out_w; ++c) {
      const std::size_t sc = c * src.width / out_w;
      out.bits[r * out_w + c] = src.bits[sr * src.width + sc] ? 1 : 0;
    }
  }
  return out;
}

Tensor preprocess_image(const GrayImage& image, const Preprocess& pre) {
  if (!(pre.std > 0.0)) throw ConfigError("normalization std must be positive");
  std::vector<double> unit(image.pixels.size());
  for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = image.pixels[i] / 255.0;
  std::vector<double> resized = resize_bilinear(unit, image.height, image.width, pre.height, pre.width);
  for (double& v : resized) v = (v - pre.mean) / pre.std;
  return Tensor({1, pre.height, pre.width}, std::move(resized));
}

Mask preprocess_mask(const GrayImage& mask, const Preprocess& pre) {
  Mask m(mask.height, mask.width);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = mask.pixels[i] != 0 ? 1 : 0;
  return resize_nearest(m, pre.height, pre.width);
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest, std::vector<std::string>* warnings) {
  std::vector<Sample> samples;
  samples.reserve(manifest.rows.size());
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || manifest.root.empty() ? path.string() : (fs::path(manifest.root) / path).string();
  };
  for (const ManifestRow& row : manifest.rows) {
    if (row.label != kHealthy && row.label != kDiseased) {
      throw IngestError("'" + row.image + "': label must be 0 or 1");
    }
    const GrayImage image = read_gray_image(resolve(row.image));
    const GrayImage mask_img = read_gray_image(resolve(row.mask));
    Sample s;
    s.id = fs::path(row.image).stem().string();
    s.label = row.label;
    s.image = preprocess_image(image, manifest.preprocess);
    s.mask = preprocess_mask(mask_img, manifest.preprocess);
    if (s.mask.count() == 0) {
      if (warnings) warnings->push_back("sample '" + s.id + "' rejected: empty mask after resize");
      continue;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Splitting

SplitIndices split_indices(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (n == 0) throw ConfigError("cannot split an empty dataset");
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  // The epsilon keeps e.g. 0.9 * 10 (= 8.999...) from flooring to 8.
  const double dn = static_cast<double>(n);
  const auto b1 = static_cast<std::size_t>(std::floor(f.train * dn + 1e-9));
  const auto b2 = std::min(n, static_cast<std::size_t>(std::floor((f.train + f.val) * dn + 1e-9)));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b1));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(b1), order.begin() + static_cast<std::ptrdiff_t>(b2));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(b2), order.end());
  if (out.train.empty() || out.val.empty() || out.test.empty()) {
    throw ConfigError("split of " + std::to_string(n) + " samples leaves an empty partition (" +
                      std::to_string(out.train.size()) + "/" + std::to_string(out.val.size()) + "/" +
                      std::to_string(out.test.size()) + ")");
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<Sample>& samples, const SplitFractions& fractions,
                           std::uint64_t seed) {
  const SplitIndices idx = split_indices(samples.size(), fractions, seed);
  DatasetSplit out;
  for (std::size_t i : idx.train) out.train.push_back(samples[i]);
  for (std::size_t i : idx.val) out.val.push_back(samples[i]);
  for (std::size_t i : idx.test) out.test.push_back(samples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct Ellipse {
  double cx, cy, ax, ay;
  bool contains(double x, double y, double shrink = 0.0) const {
    const double dx = (x - cx) / (ax - shrink);
    const double dy = (y - cy) / (ay - shrink);
    return dx * dx + dy * dy <= 1.0;
  }
};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::vector<RawSample> generate_synthetic_raw(const SyntheticConfig& cfg) {
  if (cfg.side < 8) throw ConfigError("synthetic image side must be at least 8");
  if (cfg.diseased + cfg.healthy == 0) throw ConfigError("synthetic dataset needs at least one sample");
  if (cfg.blobs_min == 0 || cfg.blobs_min > cfg.blobs_max) {
    throw ConfigError("synthetic blob count range must satisfy 1 <= min <= max");
  }
  if (!(cfg.blob_radius_min > 0.0) || cfg.blob_radius_min > cfg.blob_radius_max) {
    throw ConfigError("synthetic blob radius range must satisfy 0 < min <= max");
  }
  if (cfg.noise < 0.0) throw ConfigError("synthetic noise must be nonnegative");
  const double side = static_cast<double>(cfg.side);
  std::array<Ellipse, 2> lungs;
  for (std::size_t i = 0; i < 2; ++i) {
    lungs[i] = Ellipse{cfg.lung_center_x[i] * side, cfg.lung_center_y * side, cfg.lung_semi_x * side,
                       cfg.lung_semi_y * side};
  }
  // A blob of the largest radius must fit inside a lung with room for its centre.
  if (cfg.blob_radius_max + 1.0 >= std::min(lungs[0].ax, lungs[0].ay)) {
    throw ConfigError("blob radius " + std::to_string(cfg.blob_radius_max) +
                      " does not fit inside the lung region of a " + std::to_string(cfg.side) +
                      "-pixel image");
  }

  Mask lung_mask(cfg.side, cfg.side);
  for (std::size_t r = 0; r < cfg.side; ++r) {
    for (std::size_t c = 0; c < cfg.side; ++c) {
      const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
      if (lungs[0].contains(x, y) || lungs[1].contains(x, y)) lung_mask.bits[r * cfg.side + c] = 1;
    }
  }

  std::vector<RawSample> out;
  const std::size_t total = cfg.diseased + cfg.healthy;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(derive_seed(cfg.seed, i));
    RawSample s;
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%05zu", i);
    s.id = id;
    s.label = i < cfg.diseased ? kDiseased : kHealthy;
    s.lungs = lung_mask;
    std::vector<double> level(cfg.side * cfg.side);
    for (std::size_t k = 0; k < level.size(); ++k) {
      level[k] = lung_mask.bits[k] ? cfg.lung_level : cfg.background_level;
    }
    if (s.label == kDiseased) {
      s.mask = Mask(cfg.side, cfg.side);
      const std::size_t blobs = cfg.blobs_min + rng.below(cfg.blobs_max - cfg.blobs_min + 1);
      for (std::size_t b = 0; b < blobs; ++b) {
        const Ellipse& lung = lungs[rng.below(2)];
        const double radius = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
        double bx, by;
        do {
          bx = rng.uniform(lung.cx - lung.ax, lung.cx + lung.ax);
          by = rng.uniform(lung.cy - lung.ay, lung.cy + lung.ay);
        } while (!lung.contains(bx, by, radius));
        for (std::size_t r = 0; r < cfg.side; ++r) {
          for (std::size_t c = 0; c < cfg.side; ++c) {
            const std::size_t k = r * cfg.side + c;
            const double dx = static_cast<double>(c) + 0.5 - bx, dy = static_cast<double>(r) + 0.5 - by;
            if (dx * dx + dy * dy <= radius * radius && lung_mask.bits[k]) {
              level[k] = cfg.blob_level;
              s.mask.bits[k] = 1;
            }
          }
        }
      }
    } else {
      s.mask = lung_mask;
    }
    s.image.width = s.image.height = cfg.side;
    s.image.pixels.resize(level.size());
    for (std::size_t k = 0; k < level.size(); ++k) {
      s.image.pixels[k] = quantize(level[k] + cfg.noise * rng.normal());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> generate_synthetic(const SyntheticConfig& config, const Preprocess& pre) {
  std::vector<Sample> out;
  for (RawSample& raw : generate_synthetic_raw(config)) {
    Sample s;
    s.id = raw.id;
    s.label = raw.label;
    s.image = preprocess_image(raw.image, pre);
    GrayImage mask_img{raw.mask.width, raw.mask.height, raw.mask.bits};
    s.mask = preprocess_mask(mask_img, pre);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace attreval
