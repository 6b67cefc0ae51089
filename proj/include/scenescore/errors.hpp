#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scenescore {

// Base of every error raised by the library. `kind()` is a stable
// machine-readable tag used by the command-line front end.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  ShapeError(std::size_t op_index, const std::string& what)
      : Error("shape", "op " + std::to_string(op_index) + ": " + what),
        op_index_(op_index) {}
  std::size_t op_index() const noexcept { return op_index_; }

 private:
  std::size_t op_index_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class SchemaError : public Error {
 public:
  // line is 1-based; 0 when the error is not tied to a line.
  SchemaError(std::size_t line, const std::string& what)
      : Error("schema", line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& what) : Error("not_found", what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid_argument", what) {}
};

class FileError : public Error {
 public:
  explicit FileError(const std::string& what) : Error("missing_file", what) {}
};

}  // namespace scenescore
