#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mebt/common.hpp"
#include "mebt/ndarray.hpp"

// Tensor container: bytes 0-3 ASCII "MBT1", byte 4 dtype (0 = f32, 1 = u16),
// byte 5 rank, then rank u32 little-endian dims, then the row-major
// little-endian payload. FormatError offsets point at the offending byte.

namespace mebt::io {

inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeU16 = 1;
inline constexpr Index kMaxRank = 5;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::uint64_t off) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in[off + i])) << (8 * i);
  return static_cast<T>(v);
}

inline void put_le_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_le(out, bits);
}

inline float get_le_f32(const std::string& in, std::uint64_t off) {
  const std::uint32_t bits = get_le<std::uint32_t>(in, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

template <typename S>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<S, float>) return kDtypeF32;
  else {
    static_assert(std::is_same_v<S, std::uint16_t>, "unsupported tensor scalar");
    return kDtypeU16;
  }
}

}  // namespace detail

template <typename S>
std::string serialize_tensor(const NdArray<S>& a) {
  check(a.rank() >= 1 && a.rank() <= kMaxRank, "serialize_tensor: rank out of range");
  std::string out;
  out.reserve(6 + 4 * static_cast<std::size_t>(a.rank()) +
              sizeof(S) * a.data.size());
  out += "MBT1";
  out.push_back(static_cast<char>(detail::dtype_code<S>()));
  out.push_back(static_cast<char>(a.rank()));
  for (Index d : a.dims) {
    check(d > 0 && d <= 0xffffffffLL, "serialize_tensor: dim does not fit in u32");
    detail::put_le(out, static_cast<std::uint32_t>(d));
  }
  for (S v : a.data) {
    if constexpr (std::is_same_v<S, float>) detail::put_le_f32(out, v);
    else detail::put_le(out, v);
  }
  return out;
}

// Peeks the dtype byte without consuming anything.
inline std::uint8_t tensor_dtype(const std::string& bytes) {
  if (bytes.size() < 5) throw FormatError("tensor truncated before dtype byte", bytes.size());
  return static_cast<std::uint8_t>(bytes[4]);
}

template <typename S>
NdArray<S> deserialize_tensor(const std::string& bytes) {
  auto need = [&](std::uint64_t upto, const char* what) {
    if (bytes.size() < upto)
      throw FormatError(std::string("tensor truncated in ") + what, bytes.size());
  };
  need(4, "magic");
  if (bytes.compare(0, 4, "MBT1") != 0) {
    std::uint64_t off = 0;
    while (off < 4 && bytes[off] == "MBT1"[off]) ++off;
    throw FormatError("bad magic, expected MBT1", off);
  }
  need(6, "header");
  const auto dtype = static_cast<std::uint8_t>(bytes[4]);
  if (dtype != detail::dtype_code<S>())
    throw FormatError("unexpected dtype code " + std::to_string(dtype), 4);
  const auto rank = static_cast<std::uint8_t>(bytes[5]);
  if (rank < 1 || rank > kMaxRank)
    throw FormatError("rank " + std::to_string(rank) + " out of range [1, " +
                          std::to_string(kMaxRank) + "]",
                      5);
  std::uint64_t off = 6;
  std::vector<Index> dims(rank);
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i, off += 4) {
    need(off + 4, "dims");
    const auto d = detail::get_le<std::uint32_t>(bytes, off);
    if (d == 0) throw FormatError("zero dimension", off);
    dims[static_cast<std::size_t>(i)] = static_cast<Index>(d);
    count *= d;
  }
  const std::uint64_t payload = count * sizeof(S);
  if (bytes.size() - off != payload)
    throw FormatError("payload size " + std::to_string(bytes.size() - off) + ", expected " +
                          std::to_string(payload),
                      off);
  NdArray<S> a(dims);
  for (std::uint64_t i = 0; i < count; ++i) {
    if constexpr (std::is_same_v<S, float>)
      a.data[i] = detail::get_le_f32(bytes, off + 4 * i);
    else
      a.data[i] = detail::get_le<std::uint16_t>(bytes, off + 2 * i);
  }
  return a;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open file for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("write failed: " + path);
}

template <typename S>
void save_tensor(const std::string& path, const NdArray<S>& a) {
  write_file(path, serialize_tensor(a));
}

template <typename S>
NdArray<S> load_tensor(const std::string& path) {
  return deserialize_tensor<S>(read_file(path));
}

}  // namespace mebt::io
