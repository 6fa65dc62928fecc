// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "attreval/error.hpp"

namespace attreval {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'E', 'V', 'C'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw LengthError(std::string("tensor file truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file) {
  Writer w;
  w.put_raw(kMagic, 4);
  w.put<std::uint32_t>(kTensorFileVersion);
  w.put_str(file.name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const NamedTensor& t : file.tensors) {
    w.put_str(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape) w.put<std::uint64_t>(d);
    w.put_raw(t.value.data.data(), t.value.data.size() * sizeof(double));
  }
  w.put<std::uint32_t>(file.meta.epoch);
  w.put<double>(file.meta.val_loss);
  w.put<std::uint64_t>(file.meta.seed);
  return w.take();
}

TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a tensor file: bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kTensorFileVersion) {
    throw VersionError("unsupported tensor file version " + std::to_string(version) +
                       " (expected " + std::to_string(kTensorFileVersion) + ")");
  }
  TensorFile file;
  file.name = r.get_str("name");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_str("tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    r.need(static_cast<std::size_t>(rank) * 8, "dims");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>("dim"));
      numel *= d;
    }
    if (numel > r.remaining() / sizeof(double)) {
      throw LengthError("tensor file truncated in payload of '" + t.name + "'");
    }
    std::vector<double> data(numel);
    r.get_raw(data.data(), numel * sizeof(double), "payload");
    t.value = Tensor(std::move(shape), std::move(data));
    file.tensors.push_back(std::move(t));
  }
  file.meta.epoch = r.get<std::uint32_t>("epoch");
  file.meta.val_loss = r.get<double>("val_loss");
  file.meta.seed = r.get<std::uint64_t>("seed");
  return file;
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace attreval
