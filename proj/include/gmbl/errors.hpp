#pragma once

#include <stdexcept>

namespace gmbl {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error { using Error::Error; };
struct InvalidRange : Error { using Error::Error; };
struct InvalidLabel : Error { using Error::Error; };
struct InvalidHyperparameter : Error { using Error::Error; };
struct InvalidRate : Error { using Error::Error; };
struct UnsupportedDimension : Error { using Error::Error; };
struct DegeneratePrediction : Error { using Error::Error; };
struct NotLearnable : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConsistencyError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace gmbl
