#ifndef ALIGNFLOW_TEXT_HPP
#define ALIGNFLOW_TEXT_HPP

#include <charconv>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace alignflow {

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

inline double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, v);
  if (result.ec != std::errc() || result.ptr != end) {
    throw ValidationError("cannot parse " + std::string(what) + " from \"" + std::string(text) + "\"");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view text, std::string_view what) {
  Int v{};
  const auto* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, v);
  if (result.ec != std::errc() || result.ptr != end) {
    throw ValidationError("cannot parse " + std::string(what) + " from \"" + std::string(text) + "\"");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace alignflow

#endif  // ALIGNFLOW_TEXT_HPP
