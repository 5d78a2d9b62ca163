#pragma once

#include <stdexcept>
#include <string>

namespace anchors {

// Bad run configuration (unknown column, out-of-range parameter, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data (malformed CSV, corrupt model file, empty reference set, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A violated internal invariant. Seeing one of these is a bug.
struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InternalError(msg);
}

}  // namespace detail
}  // namespace anchors
