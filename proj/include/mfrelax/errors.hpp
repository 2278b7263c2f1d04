#pragma once

#include <stdexcept>
#include <string>

namespace mfrelax {

/// Invalid run or mesh configuration. The message names the offending key.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Entity index or dimension out of range.
class IndexError : public std::out_of_range {
public:
  using std::out_of_range::out_of_range;
};

/// Non-finite analytic field value or bad field parameters.
class EvaluationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Factorization failure, residual bound violation, or solver breakdown.
class LinearAlgebraError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Newton or eigen-iteration did not reach its tolerance.
class ConvergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition on an input field (e.g. non-solenoidal B).
class PreconditionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

} // namespace mfrelax
