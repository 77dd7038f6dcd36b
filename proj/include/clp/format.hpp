#pragma once

#include <charconv>
#include <string>

namespace clp {

// Shortest decimal that parses back to exactly `v`.
inline std::string to_shortest(float v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string to_shortest(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace clp
