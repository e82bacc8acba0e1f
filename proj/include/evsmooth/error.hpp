#pragma once

#include <stdexcept>
#include <string>

namespace evsmooth {

// Base class for all library errors. Subclasses map onto distinct CLI exit
// codes (see tools/evsmooth.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed model specification or invalid argument combination.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Input data inconsistent with the model (missing columns, bad values).
class DataError : public Error {
 public:
  using Error::Error;
};

// Numerical failure during fitting or inference.
class FitError : public Error {
 public:
  using Error::Error;
};

// Parameter outside its mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace evsmooth
