#pragma once

#include <stdexcept>
#include <string>

namespace fmue {

// Invalid numeric input to a pure function (non-finite logits, alpha < 1, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration values (indivisible sizes, unknown LoRA target, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor/array shape disagreement.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed text input; carries the 1-based data row when one applies.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long row = -1)
      : std::runtime_error(row >= 0 ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fmue
