#pragma once

#include <stdexcept>
#include <string>

namespace pflab {

// Contract violation (bad shapes, out-of-range arguments, malformed files).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration problems; the CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical breakdown mid-run (non-finite loss etc.); CLI exit code 3.
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace pflab
