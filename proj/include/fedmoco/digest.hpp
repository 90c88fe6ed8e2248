#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>

namespace fedmoco {

// 64-bit FNV-1a over the little-endian byte image of `values`.
inline std::uint64_t fnv1a64(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string to_hex(std::uint64_t value);

}  // namespace fedmoco
