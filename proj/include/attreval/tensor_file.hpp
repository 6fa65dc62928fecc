// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

// Flat little-endian tensor container shared by checkpoints and attribution maps:
//
//   "AEVC" | u32 version | str name | u32 count |
//   count x (str name | u32 rank | rank x u64 dim | f64 payload) |
//   u32 epoch | f64 val_loss | u64 seed
//
// where str is a u32 byte length followed by UTF-8 bytes.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attreval/models.hpp"

namespace attreval {

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorFile {
  std::string name;
  std::vector<NamedTensor> tensors;
  CheckpointMeta meta;
};

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file);
// Throws FormatError (bad magic), VersionError or LengthError (truncation).
TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes);

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::string& path);

}  // namespace attreval
