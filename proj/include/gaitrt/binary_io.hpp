#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "gaitrt/common.hpp"

namespace gaitrt::bin {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
  requires std::is_arithmetic_v<T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    fail(ErrorCode::FormatError, "unexpected end of model stream");
  return v;
}

template <typename T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put<std::uint64_t>(os, v.size());
  if (!v.empty()) os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> get_vec(std::istream& is, std::uint64_t max_len = (1ull << 32)) {
  const auto n = get<std::uint64_t>(is);
  if (n > max_len) fail(ErrorCode::FormatError, "implausible array length in model stream");
  std::vector<T> v(n);
  if (n && !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T))))
    fail(ErrorCode::FormatError, "truncated array in model stream");
  return v;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) fail(ErrorCode::FormatError, "implausible string length in model stream");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) fail(ErrorCode::FormatError, "truncated string in model stream");
  return s;
}

inline void put_magic(std::ostream& os, const char (&magic)[5], std::uint32_t version) {
  os.write(magic, 4);
  put<std::uint32_t>(os, version);
}

// Returns the version after checking the magic.
inline std::uint32_t expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    fail(ErrorCode::FormatError, std::string("bad magic, expected ") + magic);
  return get<std::uint32_t>(is);
}

}  // namespace gaitrt::bin
