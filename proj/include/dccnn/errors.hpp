#pragma once

#include <stdexcept>
#include <string>

namespace dccnn {

/// Tensor extents that do not line up for an operation.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Missing, malformed or incompatible input data (files, containers, sidecars).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// NaN/Inf encountered in a loss or gradient.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dccnn
