#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bt {

// Non-finite values or an otherwise invalid numeric domain.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed a value outside an operation's precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward from a non-scalar root or misaligned gradients.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A broken internal invariant (index bookkeeping, reassembly).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed binary input; carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite or exploding loss for too many consecutive batches.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bt
