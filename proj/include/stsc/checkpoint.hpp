#pragma once

// Binary checkpoint format ("STSC", version 1). All integers little-endian.
//
//   magic        4 bytes  "STSC"
//   version      u32      1
//   count        u32      number of tensors
//   per tensor:
//     name_len   u16
//     name       name_len bytes, UTF-8
//     rank       u8
//     dims       rank x u32
//     data       prod(dims) x f32 (IEEE-754, little-endian)
//   crc32        u32      CRC-32 (zlib polynomial) of every preceding byte
//
// Tensors are written in lexicographic name order, so save -> load -> save is
// byte-identical.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stsc/error.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'S', 'C'};

struct StoredTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

using TensorMap = std::map<std::string, StoredTensor>;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = ::crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void le(std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return le(4); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw CheckpointError(CheckpointError::Kind::UnexpectedEof,
                            "checkpoint: unexpected end of file at byte " + std::to_string(pos_));
    }
  }
  std::uint32_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw CheckpointError(CheckpointError::Kind::Malformed, "tensor name too long: " + name);
    if (t.dims.size() > 0xFF) throw CheckpointError(CheckpointError::Kind::Malformed, "tensor rank too large: " + name);
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "tensor " + name + ": dims do not match data length");
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
  const std::uint32_t crc = crc32_of(w.buffer());
  w.u32(crc);
  return std::move(w.buffer());
}

inline TensorMap decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::NotACheckpoint, "not a checkpoint (bad magic bytes)");
  }
  detail::ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::UnsupportedVersion,
                          "unsupported version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  TensorMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t len = r.u16();
    std::string name = r.str(len);
    StoredTensor t;
    const std::uint8_t rank = r.u8();
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    if (n > r.remaining() / 4) {
      throw CheckpointError(CheckpointError::Kind::UnexpectedEof,
                            "checkpoint: unexpected end of file in tensor " + name);
    }
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32();
    if (!out.emplace(name, std::move(t)).second) {
      throw CheckpointError(CheckpointError::Kind::Malformed, "duplicate tensor name " + name);
    }
  }
  const std::size_t body = 4 + r.pos();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) throw CheckpointError(CheckpointError::Kind::Malformed, "trailing bytes after checksum");
  if (crc32_of(bytes.first(body)) != stored) {
    throw CheckpointError(CheckpointError::Kind::CrcMismatch, "checkpoint CRC mismatch (file corrupted)");
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path.string());
}

inline void save_tensor_map(const TensorMap& tensors, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(tensors));
}

inline TensorMap load_tensor_map(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

/// Trailing CRC of an encoded checkpoint, i.e. its content hash.
inline std::uint32_t checkpoint_crc(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw CheckpointError(CheckpointError::Kind::UnexpectedEof, "checkpoint too short");
  const auto* p = bytes.data() + bytes.size() - 4;
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

template <typename T>
StoredTensor to_stored(const Tensor4<T>& t, std::vector<std::uint32_t> dims) {
  StoredTensor s{std::move(dims), {}};
  s.data.reserve(t.size());
  for (T v : t.data()) s.data.push_back(static_cast<float>(v));
  std::size_t n = 1;
  for (auto d : s.dims) n *= d;
  if (n != t.size()) throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "to_stored: dims do not cover tensor");
  return s;
}

/// Looks up `name` and checks its dims before widening into a Tensor4 of `shape`.
template <typename T>
Tensor4<T> from_stored(const TensorMap& map, const std::string& name, const std::vector<std::uint32_t>& dims,
                       Shape shape) {
  auto it = map.find(name);
  if (it == map.end()) throw CheckpointError(CheckpointError::Kind::MissingTensor, "missing tensor " + name);
  if (it->second.dims != dims) {
    std::string got, want;
    for (auto d : it->second.dims) got += std::to_string(d) + " ";
    for (auto d : dims) want += std::to_string(d) + " ";
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                          "shape mismatch for " + name + ": got [ " + got + "] expected [ " + want + "]");
  }
  std::vector<T> data(it->second.data.begin(), it->second.data.end());
  return Tensor4<T>(shape, std::move(data));
}

}  // namespace stsc
