#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hpl {

// Every failure surfaced by the library derives from Error so callers (the
// CLI in particular) can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class EmptyBankError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class InsufficientEvents : public Error {
 public:
  InsufficientEvents(std::uint64_t required, std::uint64_t available)
      : Error("insufficient events: required " + std::to_string(required) + ", available " +
              std::to_string(available)),
        required_(required),
        available_(available) {}

  std::uint64_t required() const noexcept { return required_; }
  std::uint64_t available() const noexcept { return available_; }

 private:
  std::uint64_t required_;
  std::uint64_t available_;
};

// Raised by the trainer when a loss term becomes non-finite.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& term, std::int64_t iteration)
      : Error("non-finite " + term + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}

  std::int64_t iteration() const noexcept { return iteration_; }

 private:
  std::int64_t iteration_;
};

}  // namespace hpl
