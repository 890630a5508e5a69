#pragma once

#include <stdexcept>
#include <string>

namespace tanflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, bad size, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A numeric argument lies outside an operation's domain, e.g. log(x <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A transformation cannot be evaluated or inverted because a diagonal
/// Jacobian factor is zero.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Preset or model-name string that does not follow the grammar.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input, e.g. average precision
/// without any positive label.
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

}  // namespace tanflow
