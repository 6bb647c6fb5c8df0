#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdistill {

// A token sequence of fixed horizon length; tokens are 0..vocab-1.
using Sequence = std::vector<int>;

// Thrown when an enumeration request would exceed the sequence-space cap.
struct EnumerationCapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on contradictory or malformed run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Largest sequence space any exact enumeration is allowed to touch.
// Default 10^7; the FDISTILL_ENUM_CAP environment variable overrides it.
std::int64_t enumeration_cap();

// vocab^horizon when it fits under cap, otherwise throws EnumerationCapError.
std::int64_t checked_sequence_count(int vocab, int horizon, std::int64_t cap);
std::int64_t checked_sequence_count(int vocab, int horizon);

// Round-trip-safe decimal rendering (printf %.17g), used everywhere a double
// lands in a text artifact so reruns stay byte-identical.
std::string format_double(double x);

}  // namespace fdistill
