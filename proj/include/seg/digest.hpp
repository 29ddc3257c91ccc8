#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace seg {

// FNV-1a 64-bit. Provenance fingerprints only, not a cryptographic hash.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex_digest(std::uint64_t hash) {
  static const char* digits = "0123456789abcdef";
  std::string hex(16, '0');
  for (int i = 15; i >= 0; --i) {
    hex[static_cast<std::size_t>(i)] = digits[hash & 0xF];
    hash >>= 4;
  }
  return hex;
}

inline std::string digest_of(std::string_view bytes) {
  return hex_digest(fnv1a64(bytes));
}

}  // namespace seg
