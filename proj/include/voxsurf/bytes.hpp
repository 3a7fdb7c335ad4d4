#pragma once

#include <bit>
#include <cstdint>

namespace voxsurf {

constexpr std::uint32_t byteswap32(std::uint32_t v) { return __builtin_bswap32(v); }
constexpr std::uint64_t byteswap64(std::uint64_t v) { return __builtin_bswap64(v); }

/// Host value to little-endian storage order and back.
constexpr std::uint32_t to_little(std::uint32_t v) {
  return std::endian::native == std::endian::little ? v : byteswap32(v);
}
constexpr std::uint64_t to_little(std::uint64_t v) {
  return std::endian::native == std::endian::little ? v : byteswap64(v);
}

}  // namespace voxsurf
