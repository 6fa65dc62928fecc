// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace attreval {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Decodes binary PGM (P5, maxval <= 255) or PNG; colour PNGs are converted to
// 8-bit grayscale. Throws IngestError naming the file.
GrayImage read_gray_image(const std::string& path);

void write_pgm(const std::string& path, const GrayImage& image);
// Binary PPM (P6) from interleaved RGB bytes.
void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);

}  // namespace attreval
