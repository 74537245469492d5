#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "prism/errors.hpp"

// Little-endian primitives shared by the checkpoint and embedding file formats.
namespace prism::io {

template <class UInt>
void write_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

inline void write_f32(std::ostream& out, float value) { write_le(out, std::bit_cast<std::uint32_t>(value)); }

/// Returns false on clean end-of-stream before the first byte; throws on a truncated value.
template <class UInt>
bool try_read_le(std::istream& in, UInt& value) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got == 0) return false;
  if (got != sizeof(UInt)) throw DataError("truncated binary file");
  value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return true;
}

template <class UInt>
UInt read_le(std::istream& in) {
  UInt value{};
  if (!try_read_le(in, value)) throw DataError("truncated binary file");
  return value;
}

inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }

inline void expect_magic(std::istream& in, const std::string& magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (static_cast<std::size_t>(in.gcount()) != magic.size() || got != magic) {
    throw DataError(what + ": bad magic (expected \"" + magic + "\")");
  }
}

}  // namespace prism::io
