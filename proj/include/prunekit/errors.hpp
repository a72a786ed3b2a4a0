#pragma once

#include <stdexcept>
#include <string>

namespace prunekit {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AccountingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PolicyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a structural transform (compaction) meets a topology it does not
// support, e.g. skip connections.
struct TopologyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace prunekit
