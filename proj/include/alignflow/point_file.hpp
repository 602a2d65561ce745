#ifndef ALIGNFLOW_POINT_FILE_HPP
#define ALIGNFLOW_POINT_FILE_HPP

// Text point files:
//   d=<dim> n=<count> classes=<k>
//   <class_id> <x_0> ... <x_{d-1}>     (n lines, 17 significant digits)
// Points read back carry uniform weights.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "error.hpp"
#include "sdot.hpp"
#include "text.hpp"

namespace alignflow {

inline std::string format_point_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_point_file(std::ostream& out, const Dataset& data) {
  const auto classes = data.classes();
  out << "d=" << data.dim() << " n=" << data.size() << " classes=" << classes.size() << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    out << data.class_of(i);
    for (Index k = 0; k < data.dim(); ++k) out << ' ' << format_point_value(data.points(k, i));
    out << '\n';
  }
}

inline void write_point_file(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  write_point_file(out, data);
  if (!out) throw ValidationError("write failed: " + path);
}

inline Dataset read_point_file(std::istream& in, const std::string& name = "point file") {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(name + ": missing header line");
  Index dim = -1, count = -1, nclasses = -1;
  for (const auto field : split(trim(line), ' ')) {
    if (field.empty()) continue;
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) throw ValidationError(name + ": malformed header field \"" + std::string(field) + "\"");
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "d") dim = parse_int<Index>(value, "d");
    else if (key == "n") count = parse_int<Index>(value, "n");
    else if (key == "classes") nclasses = parse_int<Index>(value, "classes");
    else throw ValidationError(name + ": unknown header key \"" + std::string(key) + "\"");
  }
  require(dim >= 1 && count >= 0 && nclasses >= 0, name + ": header must give d>=1, n and classes");
  Mat points(dim, count);
  std::vector<std::uint32_t> class_ids(static_cast<std::size_t>(count));
  std::set<std::uint32_t> seen;
  for (Index i = 0; i < count; ++i) {
    if (!std::getline(in, line)) {
      throw ValidationError(name + ": expected " + std::to_string(count) + " points, found " + std::to_string(i));
    }
    std::vector<std::string_view> fields;
    for (const auto f : split(trim(line), ' ')) {
      if (!f.empty()) fields.push_back(f);
    }
    if (static_cast<Index>(fields.size()) != dim + 1) {
      throw ValidationError(name + ": line " + std::to_string(i + 2) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(dim + 1));
    }
    class_ids[static_cast<std::size_t>(i)] = parse_int<std::uint32_t>(fields[0], "class id");
    seen.insert(class_ids[static_cast<std::size_t>(i)]);
    for (Index k = 0; k < dim; ++k) points(k, i) = parse_double(fields[static_cast<std::size_t>(k) + 1], "coordinate");
  }
  require(static_cast<Index>(seen.size()) == nclasses || count == 0,
          name + ": header says " + std::to_string(nclasses) + " classes, found " + std::to_string(seen.size()));
  const bool single_zero = seen.size() <= 1 && (seen.empty() || *seen.begin() == 0);
  return Dataset::uniform(std::move(points), single_zero ? std::vector<std::uint32_t>{} : std::move(class_ids));
}

inline Dataset read_point_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path + " for reading");
  return read_point_file(in, path);
}

}  // namespace alignflow

#endif  // ALIGNFLOW_POINT_FILE_HPP
