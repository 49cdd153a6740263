#pragma once

#include <stdexcept>

namespace zorn {

// Dimension or layout mismatch between tensors/vectors.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid caller-supplied value (token id, range, mask, flag).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A loss evaluation produced a non-finite value.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed wire frame or file.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unparseable or inconsistent run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace zorn
