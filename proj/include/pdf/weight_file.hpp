#pragma once

// Portable weight file:
//   "PDF1"
//   u32 format version, u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims
//   payload: per tensor in header order, row-major little-endian float32
//
// All integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "pdf/core_types.hpp"

namespace pdf {

inline constexpr char kWeightMagic[4] = {'P', 'D', 'F', '1'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct WeightFile {
  std::vector<Tensor> tensors;

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    detail::require(t != nullptr, ErrorCode::dimension_mismatch,
                    "weight file has no tensor '" + std::string(name) + "'");
    return *t;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  template <typename U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le<std::uint8_t>()); }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }

  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    require(remaining() >= n, ErrorCode::malformed_header, "weight file truncated in header");
  }

  template <typename U>
  U get_le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_weights(const WeightFile& wf) {
  detail::ByteWriter w;
  w.raw(std::string_view(kWeightMagic, 4));
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(wf.tensors.size()));
  for (const auto& t : wf.tensors) {
    detail::require(t.name.size() <= 0xFFFF, ErrorCode::invalid_value, "tensor name too long");
    detail::require(t.dims.size() <= 0xFF, ErrorCode::invalid_value, "tensor rank too large");
    detail::require(t.data.size() == t.numel(), ErrorCode::dimension_mismatch,
                    "tensor '" + t.name + "' data does not match its dims");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
  }
  for (const auto& t : wf.tensors)
    for (float v : t.data) w.f32(v);
  return w.bytes();
}

inline WeightFile decode_weights(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  detail::require(r.remaining() >= 4 && r.raw(4) == std::string_view(kWeightMagic, 4),
                  ErrorCode::malformed_header, "bad magic (expected PDF1)");
  const auto version = r.u32();
  detail::require(version == kWeightFormatVersion, ErrorCode::malformed_header,
                  "unsupported format version " + std::to_string(version));
  const auto count = r.u32();
  WeightFile wf;
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    const auto name_len = r.u16();
    t.name = r.raw(name_len);
    const auto rank = r.u8();
    for (std::uint8_t k = 0; k < rank; ++k) t.dims.push_back(r.u32());
    total += t.numel();
    wf.tensors.push_back(std::move(t));
  }
  detail::require(r.remaining() == total * 4, ErrorCode::dimension_mismatch,
                  "header declares " + std::to_string(total) + " floats, payload holds " +
                      std::to_string(r.remaining() / 4) + (r.remaining() % 4 ? " (plus a partial value)" : ""));
  for (auto& t : wf.tensors) {
    t.data.resize(t.numel());
    for (auto& v : t.data) v = r.f32();
  }
  return wf;
}

inline void write_weight_file(const WeightFile& wf, const std::filesystem::path& path) {
  const auto bytes = encode_weights(wf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(out.good(), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  detail::require(out.good(), ErrorCode::io, "write failed for '" + path.string() + "'");
}

inline WeightFile read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(in.good(), ErrorCode::io, "cannot open '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

/// FNV-1a over the encoded bytes; changes iff any weight bit, name or dim changes.
inline std::uint64_t checksum(const WeightFile& wf) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : encode_weights(wf)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace pdf
