#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ptab {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Header mismatch, unknown column, empty header, malformed schema file.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A data row with the wrong width. `line()` is 1-based within the source file
/// (the header is line 1), or 0 when the row did not come from a file.
class RowError : public Error {
 public:
  RowError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// Requested sizes that the data cannot satisfy (n < k, too many labels...).
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the vocabulary.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in activations, losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or incompatible checkpoint / vocabulary / corpus files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Violated operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// AUC requested on single-class input.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace ptab
