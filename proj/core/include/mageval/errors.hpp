#pragma once

#include <stdexcept>
#include <string>

namespace mageval {

// Bad input data, malformed files, contract violations in arguments.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Broken configuration: unknown template ids, bad placeholder counts, bad run configs.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Network / backend failures. `retryable` drives the retry loop.
struct TransportError : std::runtime_error {
  TransportError(const std::string& what, bool retryable_ = false, int status_ = 0)
      : std::runtime_error(what), retryable(retryable_), status(status_) {}
  bool retryable = false;
  int status = 0;  // HTTP status when one was received, else 0
};

}  // namespace mageval
