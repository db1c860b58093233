#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vgkit {

// Base of every error raised by the toolkit. The CLI maps the subclasses to
// exit codes: validation-type errors -> 1, transport/protocol errors -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a documented invariant (bad record, bad config value).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A function was called with arguments outside its precondition.
class ArgumentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Mask/RLE or binary payload could not be decoded.
class CodecError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Raw model coordinates could not be turned into a valid box.
class ConversionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// The remote side could not be reached, or kept failing after all retries.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, std::vector<std::string> attempts = {})
      : Error(what), attempts_(std::move(attempts)) {}

  const std::vector<std::string>& attempts() const noexcept { return attempts_; }

 private:
  std::vector<std::string> attempts_;
};

// The remote side answered, but with something that does not follow the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace vgkit
