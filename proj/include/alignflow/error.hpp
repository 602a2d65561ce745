#ifndef ALIGNFLOW_ERROR_HPP
#define ALIGNFLOW_ERROR_HPP

#include <stdexcept>
#include <string>

namespace alignflow {

enum class ErrorKind {
  Validation,  // bad input, shape mismatch, malformed file
  Numeric,     // non-finite values during an iterative computation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::Validation, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::Numeric, what) {}
};

/// Byte-level format error; the offset points at the first offending byte.
class FormatError : public ValidationError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : ValidationError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace alignflow

#endif  // ALIGNFLOW_ERROR_HPP
