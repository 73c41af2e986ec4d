#pragma once

#include <stdexcept>
#include <string>

namespace sizecast {

// Bad input data or arguments. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inference produced a non-finite quantity.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A density puts (numerically) no mass on an article's size grid.
class DegenerateSupportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric was requested over an empty set of observations.
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sizecast
