#pragma once

#include <stdexcept>
#include <string>

namespace mbsif {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// File contents are malformed or truncated.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Binary container carries a known magic family but an unsupported version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A precondition or type invariant was violated by the caller.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown (rank deficiency, NaN during iteration, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mbsif
