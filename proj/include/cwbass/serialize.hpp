#pragma once

// Little-endian binary records used by the checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "cwbass/core.hpp"

namespace cwbass {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> v) {
    put<std::uint64_t>(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
  }

  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void put_tag(const char (&tag)[5]) { os_.write(tag, 4); }

  void check() const {
    if (!os_) throw Error("binary write failed");
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw LoadError("unexpected end of binary record");
    return v;
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  std::vector<T> get_array(std::uint64_t max_elems = (1ull << 34)) {
    const auto n = get<std::uint64_t>();
    if (n > max_elems) throw LoadError("binary array length out of range");
    std::vector<T> v(n);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is_) throw LoadError("unexpected end of binary array");
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 24)) throw LoadError("binary string length out of range");
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) throw LoadError("unexpected end of binary string");
    return s;
  }

  void expect_tag(const char (&tag)[5]) {
    char buf[4];
    is_.read(buf, 4);
    if (!is_ || std::memcmp(buf, tag, 4) != 0)
      throw LoadError(std::string("expected section tag '") + tag + "'");
  }

 private:
  std::istream& is_;
};

}  // namespace cwbass
