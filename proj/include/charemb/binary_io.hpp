#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "charemb/error.hpp"

namespace charemb::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_bytes(std::ostream& os, std::string_view bytes) {
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_f32(std::ostream& os, std::span<const float> values) {
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size_bytes()));
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_exact(is, &v, sizeof v, what);
  return v;
}

inline std::string read_string(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n) read_exact(is, s.data(), n, what);
  return s;
}

inline void read_f32(std::istream& is, std::span<float> out, const char* what) {
  read_exact(is, out.data(), out.size_bytes(), what);
}

}  // namespace charemb::binio
