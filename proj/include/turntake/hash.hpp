#pragma once

#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <string>
#include <string_view>

namespace turntake {

// 64-bit FNV-1a. Stable across platforms and releases; used for content
// addressed ids (dp_id, prompt_hash, asset hashes).
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string content_hash(std::string_view data) { return to_hex(fnv1a64(data)); }

// Hash of several fields joined with the ASCII unit separator.
inline std::string content_hash(std::initializer_list<std::string_view> fields) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  bool first = true;
  for (auto f : fields) {
    if (!first) h = fnv1a64("\x1f", h);
    h = fnv1a64(f, h);
    first = false;
  }
  return to_hex(h);
}

}  // namespace turntake
