#pragma once

#include <stdexcept>
#include <string>

namespace turbdet {

// Error taxonomy maps onto CLI exit codes: usage=1, data=2, model=3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/shape contract violations are model errors.
struct ShapeError : ModelError {
  using ModelError::ModelError;
};

}  // namespace turbdet
