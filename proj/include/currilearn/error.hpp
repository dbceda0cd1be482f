#pragma once

#include <stdexcept>
#include <string>

namespace currilearn {

/// Bad input data or configuration. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while computing (non-finite loss, I/O, interruption). Exit code 3.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Interrupted : public RuntimeError {
 public:
  Interrupted() : RuntimeError("interrupted") {}
};

}  // namespace currilearn
