#pragma once

#include <stdexcept>
#include <string>

namespace ct {

// Bad configuration, malformed input files, infeasible generator constraints.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (diverged training etc.).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ct
