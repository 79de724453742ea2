// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Binary container shared by model checkpoints, codec files and k-means
// codebooks:
//
//   "MSKG" | u32 version | u32 record count | records...
//   record: u32 name length | name bytes | u8 dtype | u32 rank | u64 dims[rank] | raw values
//
// All integers and values are little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "maskgram/error.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'K', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI32 = 2, kI64 = 3, kU8 = 4 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI32: return 4;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
  }
  throw IoError("unknown dtype code");
}

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, double>) return DType::kF64;
  else if constexpr (std::is_same_v<T, std::int32_t>) return DType::kI32;
  else if constexpr (std::is_same_v<T, std::int64_t>) return DType::kI64;
  else {
    static_assert(std::is_same_v<T, std::uint8_t>, "unsupported checkpoint dtype");
    return DType::kU8;
  }
}

struct Record {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian element storage

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
};

namespace detail {

template <class T>
void store_le(std::uint8_t* dst, T value) {
  std::memcpy(dst, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(dst, dst + sizeof(T));
}

template <class T>
T load_le(const std::uint8_t* src) {
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(T));
  T value;
  std::memcpy(&value, tmp, sizeof(T));
  return value;
}

}  // namespace detail

/// Ordered collection of records with typed accessors.
class Checkpoint {
 public:
  std::vector<Record>& records() { return records_; }
  const std::vector<Record>& records() const { return records_; }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  template <class T>
  void put(const std::string& name, std::span<const T> values, std::vector<std::uint64_t> dims) {
    Record r;
    r.name = name;
    r.dtype = dtype_of<T>();
    r.dims = std::move(dims);
    MASKGRAM_REQUIRE(r.element_count() == values.size(), "record dims do not match values for " + name);
    r.bytes.resize(values.size() * sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) detail::store_le(r.bytes.data() + i * sizeof(T), values[i]);
    set(std::move(r));
  }

  template <class T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
    put<T>(name, std::span<const T>(t.data), std::move(dims));
  }

  void put_text(const std::string& name, std::string_view text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    put<std::uint8_t>(name, std::span<const std::uint8_t>(bytes), {bytes.size()});
  }

  const Record& at(std::string_view name) const {
    const Record* r = find(name);
    if (!r) throw IoError("checkpoint has no record named " + std::string(name));
    return *r;
  }

  template <class T>
  std::vector<T> values(std::string_view name) const {
    const Record& r = at(name);
    if (r.dtype != dtype_of<T>()) throw IoError("record " + r.name + " has an unexpected dtype");
    std::vector<T> out(r.element_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::load_le<T>(r.bytes.data() + i * sizeof(T));
    return out;
  }

  template <class T>
  Tensor<T> tensor(std::string_view name) const {
    const Record& r = at(name);
    std::vector<std::size_t> shape(r.dims.begin(), r.dims.end());
    return Tensor<T>(std::move(shape), values<T>(name));
  }

  std::string text(std::string_view name) const {
    auto bytes = values<std::uint8_t>(name);
    return std::string(bytes.begin(), bytes.end());
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
    auto u32 = [&out](std::uint32_t v) {
      std::uint8_t b[4];
      detail::store_le(b, v);
      out.insert(out.end(), b, b + 4);
    };
    auto u64 = [&out](std::uint64_t v) {
      std::uint8_t b[8];
      detail::store_le(b, v);
      out.insert(out.end(), b, b + 8);
    };
    u32(kCheckpointVersion);
    u32(static_cast<std::uint32_t>(records_.size()));
    for (const auto& r : records_) {
      u32(static_cast<std::uint32_t>(r.name.size()));
      out.insert(out.end(), r.name.begin(), r.name.end());
      out.push_back(static_cast<std::uint8_t>(r.dtype));
      u32(static_cast<std::uint32_t>(r.dims.size()));
      for (auto d : r.dims) u64(d);
      out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    return out;
  }

  static Checkpoint deserialize(std::span<const std::uint8_t> in) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (pos + n > in.size()) throw IoError("truncated checkpoint");
    };
    auto u32 = [&] {
      need(4);
      auto v = detail::load_le<std::uint32_t>(in.data() + pos);
      pos += 4;
      return v;
    };
    auto u64 = [&] {
      need(8);
      auto v = detail::load_le<std::uint64_t>(in.data() + pos);
      pos += 8;
      return v;
    };
    need(4);
    if (std::memcmp(in.data(), kCheckpointMagic, 4) != 0) throw IoError("not a MSKG file (bad magic)");
    pos = 4;
    const std::uint32_t version = u32();
    if (version != kCheckpointVersion)
      throw IoError("unsupported MSKG format version " + std::to_string(version));
    Checkpoint ck;
    const std::uint32_t count = u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      Record r;
      const std::uint32_t len = u32();
      need(len);
      r.name.assign(reinterpret_cast<const char*>(in.data() + pos), len);
      pos += len;
      need(1);
      const std::uint8_t code = in[pos++];
      if (code > static_cast<std::uint8_t>(DType::kU8)) throw IoError("unknown dtype code in " + r.name);
      r.dtype = static_cast<DType>(code);
      const std::uint32_t rank = u32();
      for (std::uint32_t k = 0; k < rank; ++k) r.dims.push_back(u64());
      const std::size_t nbytes = r.element_count() * dtype_size(r.dtype);
      need(nbytes);
      r.bytes.assign(in.begin() + static_cast<std::ptrdiff_t>(pos),
                     in.begin() + static_cast<std::ptrdiff_t>(pos + nbytes));
      pos += nbytes;
      ck.records_.push_back(std::move(r));
    }
    if (pos != in.size()) throw IoError("trailing bytes after checkpoint records");
    return ck;
  }

  void save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

 private:
  const Record* find(std::string_view name) const {
    for (const auto& r : records_)
      if (r.name == name) return &r;
    return nullptr;
  }

  void set(Record r) {
    for (auto& existing : records_) {
      if (existing.name == r.name) {
        existing = std::move(r);
        return;
      }
    }
    records_.push_back(std::move(r));
  }

  std::vector<Record> records_;
};

}  // namespace maskgram
