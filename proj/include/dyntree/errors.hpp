#pragma once

#include <stdexcept>
#include <string>

namespace dyntree {

// Malformed or missing input data (datasets, corpora, checkpoints).
// CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Transport or protocol failure talking to an answer backend.
// CLI maps this to exit code 3.
class BackendError : public std::runtime_error {
 public:
  explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

// A decomposition request produced no parseable sub-questions. Solvers
// catch this and fall back to direct answering.
class DecompositionError : public BackendError {
 public:
  explicit DecompositionError(const std::string& what) : BackendError(what) {}
};

}  // namespace dyntree
