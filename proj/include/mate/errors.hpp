#pragma once

#include <stdexcept>
#include <string>

namespace mate {

// Invalid configuration or inconsistent dimensions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: stepping a finished episode, overflowing a horizon, mismatched shapes.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced somewhere it must not be.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the mathematical domain of an operation (e.g. variance <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Normalization of a (near) zero vector.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed data: bad checkpoint bytes, non-positive timings, impossible evidence.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mate
