#pragma once

// Locale-independent number formatting for CSV and text outputs.

#include <charconv>
#include <string>

namespace drgcn {

/// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace drgcn
