#pragma once

#include <stdexcept>
#include <string>

namespace hpcs {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value; `field` names the offending setting.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Malformed counter data (e.g. a cumulative counter going backwards).
class DataError : public Error {
 public:
  using Error::Error;
};

// A file or stream could not be decoded.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Input vector width does not match the model or event set.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// The platform cannot provide the requested counters.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// The platform refuses access to counters for lack of privilege.
class PrivilegeError : public Error {
 public:
  using Error::Error;
};

}  // namespace hpcs
