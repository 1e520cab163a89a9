#pragma once

#include <stdexcept>
#include <string>

namespace fopro {

// Non-finite or malformed data handed to an operation.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar or shape argument outside its allowed domain.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition the caller was responsible for did not hold.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericDegeneracy : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Not enough samples of a class to carve out the requested splits.
class ShortfallError : public std::runtime_error {
 public:
  ShortfallError(std::string class_name, const std::string& what)
      : std::runtime_error(what), class_name_(std::move(class_name)) {}
  const std::string& class_name() const noexcept { return class_name_; }

 private:
  std::string class_name_;
};

class InvalidManifest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss went non-finite during training; the message carries the batch
// index and every loss component.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fopro
