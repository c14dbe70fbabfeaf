#pragma once

#include <stdexcept>
#include <string>

namespace seisinv {

// Error categories map onto CLI exit codes: usage 1, data/config 2, numerical 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace seisinv
