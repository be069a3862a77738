#pragma once

#include <stdexcept>
#include <string>

namespace therasim {

// Root of every exception the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when the simulator detects a broken internal invariant. Runs abort on
// this rather than producing output nobody can trust.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace therasim
