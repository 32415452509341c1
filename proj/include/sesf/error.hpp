#pragma once

#include <stdexcept>
#include <string>

namespace sesf {

// Raised when a caller breaks an operation's documented contract
// (shape mismatch, bad mask entry, missing gradient, ...).
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a configuration value is invalid before any work starts.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an op produces a non-finite value, naming the op.
class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

// Raised on malformed external files (corpus, checkpoints, configs).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sesf
