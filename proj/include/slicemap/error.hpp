#pragma once

#include <stdexcept>
#include <string>

namespace slicemap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes, image sizes or parameter tables that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required, or a singular system.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated files (volumes, sidecars, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid user-facing configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training loss went non-finite or exceeded the divergence guard.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace slicemap
