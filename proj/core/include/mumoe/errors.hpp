#pragma once

#include <stdexcept>
#include <string>

namespace mumoe {

/// Operand extents or ranks do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite input or a value outside the operation's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The caller violated a precondition (wrong mode, stale cache, bad index).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk data: bad magic, truncation, duplicate names.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incomplete configuration text.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mumoe
