#pragma once

#include <stdexcept>
#include <string>

namespace bcwi {

// Invalid configuration, argument contract violation, or incompatible
// artifacts. CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed, missing, or insufficient input data. CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A computation produced non-finite values. CLI exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bcwi
