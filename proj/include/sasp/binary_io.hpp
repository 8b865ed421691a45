#pragma once

// Little-endian primitive encoding for the feature and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sasp/errors.hpp"

namespace sasp::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  template <typename T>
  void pod(T v) {
    v = byteswap_if_big(v);
    bytes(&v, sizeof(T));
  }

  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  template <typename T>
  void array(const T* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(p, n * sizeof(T));
    } else {
      for (std::size_t i = 0; i < n; ++i) pod(p[i]);
    }
  }

 private:
  std::ostream& os_;
};

// Reader that tracks the byte offset for error reporting.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::size_t offset() const { return offset_; }

  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw ParseError(std::string("truncated payload reading ") + what, offset_ + static_cast<std::size_t>(is_.gcount()));
    offset_ += n;
  }

  template <typename T>
  T pod(const char* what) {
    T v;
    bytes(&v, sizeof(T), what);
    return byteswap_if_big(v);
  }

  std::uint32_t u32(const char* what) { return pod<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return pod<std::uint64_t>(what); }
  double f64(const char* what) { return pod<double>(what); }

  std::string str(const char* what, std::size_t max_len = 1 << 20) {
    const std::size_t at = offset_;
    const std::uint32_t n = u32(what);
    if (n > max_len) throw ParseError(std::string("implausible string length for ") + what, at);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

  template <typename T>
  void array(T* p, std::size_t n, const char* what) {
    bytes(p, n * sizeof(T), what);
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < n; ++i) p[i] = byteswap_if_big(p[i]);
  }

  bool at_eof() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace sasp::binary
