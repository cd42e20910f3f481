// Copyright 2026 The LWAM Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lwam {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian primitive writers/readers, independent of host byte order.
namespace le {

template <typename U>
void put_uint(std::ostream& os, U v) {
  char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, sizeof(U));
}

template <typename U>
U get_uint(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

inline void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { put_uint(os, v); }
inline std::uint32_t get_u32(std::istream& is) { return get_uint<std::uint32_t>(is); }
inline std::uint64_t get_u64(std::istream& is) { return get_uint<std::uint64_t>(is); }

inline void put_f32s(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_u32(os, std::bit_cast<std::uint32_t>(p[i]));
  }
}
inline void get_f32s(std::istream& is, float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float))))
      throw FormatError("unexpected end of file");
  } else {
    for (std::size_t i = 0; i < n; ++i) p[i] = std::bit_cast<float>(get_u32(is));
  }
}

inline void put_f64s(std::ostream& os, const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) put_u64(os, std::bit_cast<std::uint64_t>(p[i]));
}
inline void get_f64s(std::istream& is, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = std::bit_cast<double>(get_u64(is));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is, std::size_t max_len = std::size_t{1} << 30) {
  const std::uint64_t n = get_u64(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("unexpected end of file");
  return s;
}

inline void put_magic(std::ostream& os, const char (&m)[5]) { os.write(m, 4); }
inline void expect_magic(std::istream& is, const char (&m)[5], const std::string& what) {
  char b[4];
  if (!is.read(b, 4) || std::memcmp(b, m, 4) != 0) throw FormatError(what + ": bad magic");
}

}  // namespace le
}  // namespace lwam
