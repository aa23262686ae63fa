#pragma once

#include <stdexcept>

namespace tbsn {

// Thrown when a computation produces non-finite values or diverges.
// Configuration problems use std::invalid_argument; file problems use
// std::runtime_error. The C API maps each family to its own status code.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tbsn
