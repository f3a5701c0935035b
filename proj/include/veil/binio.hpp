#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "veil/common.hpp"

namespace veil {

// Little-endian binary readers/writers for the toolkit's file formats.
// All formats are defined little-endian; this code assumes an LE host.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_bytes(os, &v, sizeof(v));
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, size_t n,
                       const char* what = "data") {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
}

template <typename T>
T read_pod(std::istream& is, const char* what = "field") {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  read_bytes(is, &v, sizeof(v), what);
  return v;
}

inline std::string read_str(std::istream& is, const char* what = "string") {
  const uint32_t n = read_pod<uint32_t>(is, what);
  if (n > (1u << 20)) throw IoError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

template <typename T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_pod<uint64_t>(os, static_cast<uint64_t>(v.size()));
  write_bytes(os, v.data(), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_vec(std::istream& is, const char* what = "array") {
  static_assert(std::is_trivially_copyable_v<T>);
  const uint64_t n = read_pod<uint64_t>(is, what);
  if (n > (1ull << 33)) throw IoError(std::string("implausible size for ") + what);
  std::vector<T> v(static_cast<size_t>(n));
  read_bytes(is, v.data(), v.size() * sizeof(T), what);
  return v;
}

}  // namespace veil
