#pragma once

#include <stdexcept>
#include <string>

namespace mreit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid grid, mask, electrode or region construction.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or argument outside its admissible range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Solver failure, non-finite values, or any other numeric breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mreit
