#pragma once

#include <stdexcept>
#include <string>

namespace rpl {

// Every failure the toolkit reports derives from Error. The exit code is the
// CLI contract: 2 config/input, 3 numeric singularity, 4 fitting.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

// Malformed or dimensionally inconsistent input.
class InputError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation's precondition (wrong action count, bad mode).
class ContractError : public Error {
 public:
  using Error::Error;
};

// All-zero scores and similar inputs that carry no information.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class FittingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace rpl
