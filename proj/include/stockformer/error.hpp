#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stockformer {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input (zero window, odd d_model, fast >= slow, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Problems with the data being ingested or transformed.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Shape, gradient and metric failures inside the numeric core.
class NumericError : public Error {
 public:
  using Error::Error;
};

class MalformedRow : public DataError {
 public:
  MalformedRow(std::size_t row, const std::string& reason)
      : DataError("malformed row " + std::to_string(row) + ": " + reason), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class InvariantViolation : public DataError {
 public:
  InvariantViolation(std::size_t row, const std::string& reason)
      : DataError("invariant violation at row " + std::to_string(row) + ": " + reason), row_(row) {}
  explicit InvariantViolation(const std::string& reason) : DataError("invariant violation: " + reason) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_ = 0;
};

class MissingColumn : public DataError {
 public:
  explicit MissingColumn(const std::string& column) : DataError("missing column: " + column) {}
};

class EmptyFile : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientHistory : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateFeature : public DataError {
 public:
  using DataError::DataError;
};

class UnknownKey : public DataError {
 public:
  using DataError::DataError;
};

class SimplexViolation : public DataError {
 public:
  using DataError::DataError;
};

class ShapeMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};

class NotScalar : public NumericError {
 public:
  using NumericError::NumericError;
};

class MissingGrad : public NumericError {
 public:
  using NumericError::NumericError;
};

class LengthMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateTruth : public NumericError {
 public:
  using NumericError::NumericError;
};

class NoValidPairs : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace stockformer
