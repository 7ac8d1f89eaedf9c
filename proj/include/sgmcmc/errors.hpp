#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sgmcmc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A placeholder or variable was not supplied a value.
class MissingFeed : public Error {
 public:
  using Error::Error;
};

class UnknownVariable : public Error {
 public:
  using Error::Error;
};

/// Argument outside the valid domain (bad distribution parameter, bad size).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LifecycleError : public Error {
 public:
  using Error::Error;
};

class DegenerateChain : public Error {
 public:
  using Error::Error;
};

class UnsupportedForKL : public Error {
 public:
  using Error::Error;
};

/// File system or parse failure; the message carries path and line context.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A chain produced a non-finite value or left a parameter's support.
class NumericalDivergence : public Error {
 public:
  NumericalDivergence(std::uint64_t iteration, std::string parameter,
                      const std::string& what)
      : Error("numerical divergence at iteration " + std::to_string(iteration) +
              " (parameter '" + parameter + "'): " + what),
        iteration_(iteration),
        parameter_(std::move(parameter)) {}

  std::uint64_t iteration() const noexcept { return iteration_; }
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::uint64_t iteration_;
  std::string parameter_;
};

}  // namespace sgmcmc
