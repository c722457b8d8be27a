#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace pcev {

// Caller-side mistakes: bad configuration, violated preconditions.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure talking to an external model service. Transient faults
// (timeouts, 5xx) are retryable; 4xx responses are not.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(const std::string& what, bool retryable, int status = 0,
               std::optional<std::string> unit_id = std::nullopt)
      : std::runtime_error(what),
        retryable_(retryable),
        status_(status),
        unit_id_(std::move(unit_id)) {}

  bool retryable() const { return retryable_; }
  int status() const { return status_; }
  const std::optional<std::string>& unit_id() const { return unit_id_; }

 private:
  bool retryable_;
  int status_;
  std::optional<std::string> unit_id_;
};

// The service answered, but the answer breaks the wire contract.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The endpoint does not offer the requested capability (e.g. no logprobs).
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model output that could not be parsed; the raw text is kept for audit.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

}  // namespace pcev
