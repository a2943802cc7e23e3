#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svmamba {

enum class ErrorKind {
  Parse,
  Io,
  Argument,
  Shape,
  UnsupportedFormat,
  DegenerateGraph,
  DegenerateVector,
  Convergence,
  Numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Argument: return "argument error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::UnsupportedFormat: return "unsupported format";
    case ErrorKind::DegenerateGraph: return "degenerate graph";
    case ErrorKind::DegenerateVector: return "degenerate vector";
    case ErrorKind::Convergence: return "convergence error";
    case ErrorKind::Numeric: return "numeric error";
  }
  return "error";
}

/// Base of every exception thrown by the library. The kind drives the CLI
/// exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(ErrorKind::Parse, what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DegenerateGraphError : public Error {
 public:
  DegenerateGraphError(std::size_t node, const std::string& what)
      : Error(ErrorKind::DegenerateGraph, what + " (node " + std::to_string(node) + ")"),
        node_(node) {}

  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

class NumericError : public Error {
 public:
  NumericError(std::size_t step, const std::string& what)
      : Error(ErrorKind::Numeric, what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

[[noreturn]] inline void throw_argument(const std::string& what) {
  throw Error(ErrorKind::Argument, what);
}

[[noreturn]] inline void throw_shape(const std::string& what) {
  throw Error(ErrorKind::Shape, what);
}

}  // namespace svmamba
