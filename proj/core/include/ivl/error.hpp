#pragma once

#include <stdexcept>
#include <string>

namespace ivl {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension violations.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf inputs, empty reductions, divergence.
struct NumericError : Error {
  using Error::Error;
};

// File format, checksum and version problems.
struct IoError : Error {
  using Error::Error;
};

// Missing/invalid configuration keys.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace ivl
