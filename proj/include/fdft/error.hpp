#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fdft {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree. The message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An invalid hyperparameter or structural option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values were produced or detected.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of a stateful object, e.g. backward without a recorded forward.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (e.g. AUROC with one class).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace fdft
