#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ufdn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture, hyper-parameters or configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed user-supplied values (targets, labels, domain codes).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// API misuse that indicates a programming error in the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, std::string loss_name)
      : Error("training diverged at step " + std::to_string(step) +
              ": loss '" + loss_name + "' is not finite"),
        step_(step),
        loss_name_(std::move(loss_name)) {}

  std::size_t step() const { return step_; }
  const std::string& loss_name() const { return loss_name_; }

 private:
  std::size_t step_;
  std::string loss_name_;
};

}  // namespace ufdn
