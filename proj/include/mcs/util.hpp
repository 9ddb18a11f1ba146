#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace mcs {

/// Raised for malformed configuration or command-line input.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a solver stage cannot complete (breakdown, divergence, stale setup).
struct solver_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip formatting for doubles; deterministic across runs.
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw solver_error(msg);
}

} // namespace mcs
