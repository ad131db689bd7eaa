// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hacm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform. The message names the primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An input lies outside the domain of a function (e.g. atanh of |x| > 1).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the differentiation graph (non-scalar loss, double backward).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or inconsistent arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Base class for on-disk format problems.
class FormatError : public Error {
 public:
  using Error::Error;
};

class HeaderError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace hacm
