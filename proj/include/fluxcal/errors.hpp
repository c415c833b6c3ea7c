#pragma once

#include <stdexcept>
#include <string>

namespace fluxcal {

// Bad input: malformed file, inconsistent dimensions, value out of range.
// The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical failure: optimizer breakdown, singular solve, non-bracketing root.
// The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Too many bootstrap replicates failed to fit. The CLI maps this to exit code 4.
class EnsembleQualityError : public std::runtime_error {
 public:
  explicit EnsembleQualityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fluxcal
