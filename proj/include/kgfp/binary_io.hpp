// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian primitives shared by the cache and checkpoint formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace kgfp::io {

/// Raised by the readers below when the stream ends early.
class EndOfData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename U>
void put_uint(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>(value >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_uint(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw EndOfData("unexpected end of data");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
  }
  return value;
}

inline void put_f32(std::ostream& os, float v) {
  put_uint<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
}
inline float get_f32(std::istream& is) {
  return std::bit_cast<float>(get_uint<std::uint32_t>(is));
}

inline void put_f64(std::ostream& os, double v) {
  put_uint<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}
inline double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(is));
}

/// Bulk f32 write; the host is checked to be little-endian at compile time
/// so the in-memory layout already matches the file layout.
inline void put_f32_array(std::ostream& os, const float* data, std::size_t n) {
  static_assert(std::endian::native == std::endian::little,
                "big-endian hosts need a byte-swapping path");
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * sizeof(float)));
}
inline void get_f32_array(std::istream& is, float* data, std::size_t n) {
  if (!is.read(reinterpret_cast<char*>(data),
               static_cast<std::streamsize>(n * sizeof(float)))) {
    throw EndOfData("unexpected end of data");
  }
}

/// u16 length followed by the raw UTF-8 bytes.
inline void put_str16(std::ostream& os, const std::string& s) {
  if (s.size() > 0xFFFF) throw std::length_error("string longer than 65535 bytes");
  put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str16(std::istream& is) {
  const auto n = get_uint<std::uint16_t>(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw EndOfData("unexpected end of data");
  return s;
}

}  // namespace kgfp::io
