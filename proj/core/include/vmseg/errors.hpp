#pragma once

#include <stdexcept>
#include <string>

namespace vmseg {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor rank/dimension mismatch.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad layer/model/tool configuration (invalid kernel size, depth, flag value...).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Violated call contract (non-scalar loss, non-positive delta, bad mask values...).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Non-finite value detected while the finite-check debug mode is on.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// File/folder I/O problems (missing mask, unreadable PNG, truncated checkpoint...).
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace vmseg
