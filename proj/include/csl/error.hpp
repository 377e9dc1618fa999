#pragma once

#include <stdexcept>
#include <string>

namespace csl {

// Invalid input data or configuration (bad file, out-of-range label, ...).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure while running a pipeline (non-finite loss, empty kept set, ...).
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace csl
