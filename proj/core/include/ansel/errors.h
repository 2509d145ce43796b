#ifndef ANSEL_ERRORS_H_
#define ANSEL_ERRORS_H_

#include <stdexcept>
#include <string>

namespace ansel {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, flags or architecture descriptions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, labels, ids).
class DataError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autograd tape (e.g. running backward twice).
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace ansel

#endif  // ANSEL_ERRORS_H_
