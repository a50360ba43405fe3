#pragma once

#include <stdexcept>
#include <string>

namespace tdmapos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (negative time step, non-finite input, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed or invalid scenario document. `field()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Beacon bytes that do not form exactly one well-formed message.
class FramingError : public Error {
 public:
  using Error::Error;
};

/// A station asked to transmit in a slot it does not own.
class SchedulingError : public Error {
 public:
  using Error::Error;
};

/// An offset sample arrived that is not newer than the track's newest sample.
class StalenessError : public Error {
 public:
  using Error::Error;
};

class InsufficientHistory : public Error {
 public:
  using Error::Error;
};

class UnderdeterminedSet : public Error {
 public:
  using Error::Error;
};

/// Normal matrix too ill-conditioned to invert, or receiver on top of a station.
class SingularGeometry : public Error {
 public:
  SingularGeometry(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Log files missing or unparsable.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Too few converged epochs for a statistic.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Two receivers' solutions share no epochs.
class PairingError : public Error {
 public:
  using Error::Error;
};

}  // namespace tdmapos
