#pragma once

#include <stdexcept>
#include <string>

namespace hexfleet {

// Tensor or matrix dimensions do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A point, cell or index lies outside the domain an operation covers.
struct DomainError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric requested over an empty population (zero runtime, zero orders).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Episode context and step index disagree.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// A pipeline stage was requested before the stage it depends on.
struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hexfleet
