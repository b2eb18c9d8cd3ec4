#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "semcache/errors.hpp"

namespace semcache::binary {

// Little-endian primitives shared by the fixture, checkpoint and snapshot
// formats. Encoding is explicit byte-by-byte so files are portable regardless
// of host byte order.

template <typename T>
  requires std::is_unsigned_v<T>
void write_uint(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  }
  out.write(bytes.data(), bytes.size());
}

inline void write_f32(std::ostream& out, float value) {
  write_uint(out, std::bit_cast<std::uint32_t>(value));
}

inline void write_f64(std::ostream& out, double value) {
  write_uint(out, std::bit_cast<std::uint64_t>(value));
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

// u16 length prefix + raw UTF-8 bytes.
inline void write_short_string(std::ostream& out, std::string_view s) {
  if (s.size() > 0xFFFFu) {
    throw ValidationError("string longer than 65535 bytes cannot be stored: " +
                          std::string(s.substr(0, 32)) + "...");
  }
  write_uint(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// u32 length prefix, for response bodies and other long text.
inline void write_long_string(std::ostream& out, std::string_view s) {
  write_uint(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_f32_span(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) write_f32(out, v);
  }
}

// Reads throw CorruptionError on a short read; the message names what was
// being read so truncated files are easy to diagnose.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void read_exact(char* dst, std::size_t n, std::string_view what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CorruptionError("unexpected end of file while reading " + std::string(what));
    }
  }

  template <typename T>
    requires std::is_unsigned_v<T>
  T read_uint(std::string_view what) {
    std::array<unsigned char, sizeof(T)> bytes{};
    read_exact(reinterpret_cast<char*>(bytes.data()), bytes.size(), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
    }
    return value;
  }

  float read_f32(std::string_view what) {
    return std::bit_cast<float>(read_uint<std::uint32_t>(what));
  }

  double read_f64(std::string_view what) {
    return std::bit_cast<double>(read_uint<std::uint64_t>(what));
  }

  std::string read_short_string(std::string_view what) {
    const auto len = read_uint<std::uint16_t>(what);
    std::string s(len, '\0');
    read_exact(s.data(), len, what);
    return s;
  }

  std::string read_long_string(std::string_view what) {
    const auto len = read_uint<std::uint32_t>(what);
    std::string s(len, '\0');
    read_exact(s.data(), len, what);
    return s;
  }

  void read_f32_span(std::span<float> dst, std::string_view what) {
    read_exact(reinterpret_cast<char*>(dst.data()), dst.size_bytes(), what);
    if constexpr (std::endian::native != std::endian::little) {
      for (float& v : dst) {
        auto u = std::bit_cast<std::uint32_t>(v);
        v = std::bit_cast<float>(__builtin_bswap32(u));
      }
    }
  }

  // Reads `magic.size()` bytes and compares; mismatch is a format error.
  void expect_magic(std::string_view magic, std::string_view file_kind) {
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (static_cast<std::size_t>(in_.gcount()) != got.size() || got != magic) {
      throw FormatError("not a " + std::string(file_kind) + " file (magic mismatch, expected '" +
                        std::string(magic) + "')");
    }
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
};

}  // namespace semcache::binary
