#pragma once

#include <stdexcept>
#include <string>

namespace fedmoco {

// Invalid experiment or encoder configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter dimensions do not line up.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller-supplied argument violates an operation precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of a transform (e.g. log of zero).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed message on the server/node channel.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedmoco
