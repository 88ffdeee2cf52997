#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ctox {

// Base for every failure raised by the toolkit. Callers that need to tell
// failure kinds apart catch the derived types.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Collects non-fatal conditions (warnings) so library code never writes to
// stderr directly. The CLI drains it after each operation.
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
  bool empty() const { return warnings.empty(); }
};

}  // namespace ctox
