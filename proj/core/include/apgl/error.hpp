#pragma once

#include <stdexcept>
#include <string>

namespace apgl {

// Base for every error raised by the library. Callers that only need a
// message can catch std::runtime_error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Numerically undefined input: fully masked softmax row, zero-norm row
// under cosine similarity, all-padding sequence.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (non-scalar backward, bad parameter range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or unusable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf observed in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace apgl
