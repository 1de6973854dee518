#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

#include "swhf/errors.hpp"

namespace swhf::binio {

static_assert(std::endian::native == std::endian::little, "binary container assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw IoError("binary container truncated");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void put_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 8); }

inline void expect_magic(std::istream& in, std::string_view magic) {
  char buf[8];
  if (!in.read(buf, 8) || std::string_view(buf, 8) != magic)
    throw IoError("binary container: expected magic " + std::string(magic));
}

}  // namespace swhf::binio
