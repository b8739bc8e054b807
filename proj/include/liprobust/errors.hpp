#pragma once

#include <stdexcept>

namespace liprobust {

/// Invalid configuration or arguments; the CLI maps it to exit code 2.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

/// Non-finite intermediates, singular solves, diverged losses. Exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace liprobust
