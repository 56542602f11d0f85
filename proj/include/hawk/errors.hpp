#pragma once

#include <stdexcept>
#include <string>

namespace hawk {

// Error taxonomy shared by all modules. Everything derives from hawk::Error
// so callers can catch the whole family at once; the CLI maps subtypes to
// exit codes (usage/validation vs. runtime failure).

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up (matmul, projections, aggregation).
struct ShapeError : Error {
  using Error::Error;
};

// Index or count out of the valid range (top-k, keep_count, step counts).
struct BoundsError : Error {
  using Error::Error;
};

// A softmax row with every entry masked out.
struct DegenerateRowError : Error {
  using Error::Error;
};

// Bad configuration: mask referencing unknown head, unknown suite, invalid
// model dimensions.
struct ConfigError : Error {
  using Error::Error;
};

// File read/write failures; message carries the path.
struct IoError : Error {
  using Error::Error;
};

// Data that is internally inconsistent (decision indices out of range,
// non-finite scores).
struct ConsistencyError : Error {
  using Error::Error;
};

// Benchmark run too short for the timer; caller should use a larger config.
struct BenchmarkError : Error {
  using Error::Error;
};

}  // namespace hawk
