#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace eqdecomp {

// Base of every library error. Each subclass maps to one CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unknown variable/level names, malformed tables or configuration.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Invalid partition, role bindings, or cohort (e.g. race not binary).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries 1-based row and the column name.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t row, std::string column, const std::string& what)
      : ValidationError("row " + std::to_string(row) + ", column '" + column + "': " + what),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

// Positivity / support failures (assumption B1, proposition support condition).
class PositivityError : public Error {
 public:
  using Error::Error;
};

// Conditional requested on zero-probability evidence.
class UndefinedConditionalError : public PositivityError {
 public:
  using PositivityError::PositivityError;
};

// Assumption B2: (target, allowable) configurations without common support across race.
class CommonSupportError : public PositivityError {
 public:
  using PositivityError::PositivityError;
};

// Response observed at fewer than two levels in the fitting group.
class DegenerateResponseError : public Error {
 public:
  using Error::Error;
};

struct IterationRecord {
  int iteration = 0;
  double log_likelihood = 0.0;
  double max_step = 0.0;
  double gradient_norm = 0.0;
  bool ridge = false;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<IterationRecord> trace)
      : Error(what), trace_(std::move(trace)) {}

  const std::vector<IterationRecord>& trace() const noexcept { return trace_; }

 private:
  std::vector<IterationRecord> trace_;
};

// Generator configuration whose selection probability is effectively zero.
class InfeasibleCohortError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Too many bootstrap replicates failed to produce an estimate.
class BootstrapError : public Error {
 public:
  using Error::Error;
};

}  // namespace eqdecomp
