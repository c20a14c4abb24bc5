#ifndef TRIALKIT_ERRORS_HPP
#define TRIALKIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace trialkit {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed model formula or a formula referencing unknown factors.
class FormulaError : public Error {
 public:
  using Error::Error;
};

// Bad input data: unparseable files, unknown factors/levels, empty tables.
class DataError : public Error {
 public:
  using Error::Error;
};

// Model cannot be built or fitted: unsupported random structures,
// inestimable requests, non-convergence.
class ModelError : public Error {
 public:
  using Error::Error;
};

}  // namespace trialkit

#endif  // TRIALKIT_ERRORS_HPP
