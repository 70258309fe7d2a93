#pragma once

#include <stdexcept>
#include <string>

namespace ci4gi {

// Shape mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside an operation's domain (log of non-positive, zero-norm vector, ...).
struct NumericDomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct InvalidGraphError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse: backward on an untracked node, k < 1, empty batches.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidDatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss during optimization.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ci4gi
