#pragma once

#include <stdexcept>
#include <string>

namespace mst {

// Tensor extents do not line up for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A hyperparameter or option is outside its valid domain.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Quaternion (or predicted quaternion) with norm too close to zero.
class DegenerateOrientationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint magic/version/layout problems.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint does not match the model it is loaded into.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mst
