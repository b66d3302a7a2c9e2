#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace acof {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector/region dimensions disagree with the parameter space.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented domain (target <= 0, point out of bounds...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A type invariant was violated while constructing a value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidMeasurementError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  TemplateError(std::string placeholder, const std::string& what)
      : Error(what), placeholder_(std::move(placeholder)) {}
  const std::string& placeholder() const noexcept { return placeholder_; }

 private:
  std::string placeholder_;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegenerateRegionError : public Error {
 public:
  using Error::Error;
};

class EmptyReportError : public Error {
 public:
  using Error::Error;
};

/// Malformed agent reply; the message is the reason fed back on retry.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// An agent gave up after exhausting its retries.
class AgentFailure : public Error {
 public:
  AgentFailure(const std::string& what, std::string last_response)
      : Error(what), last_response_(std::move(last_response)) {}
  const std::string& last_response() const noexcept { return last_response_; }

 private:
  std::string last_response_;
};

/// Network failure, timeout or exhausted HTTP retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace acof
