#pragma once

#include <stdexcept>
#include <string>

namespace stmix {

// Base type for all library failures. The CLI maps ArgumentError /
// ShapeError / ParseError to the usage exit code and everything else
// to the computation exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct DegeneracyError : Error { using Error::Error; };
struct SingularityError : Error { using Error::Error; };
struct CoverageError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct UndefinedRegionError : Error { using Error::Error; };

}  // namespace stmix
