#pragma once

#include <stdexcept>
#include <string>

namespace stabguard {

/// Vector/matrix shapes that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A scalar or structural argument outside its documented domain.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed serialized bytes or an unknown format version.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration that fails validation (bad key, bad value, missing file).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The controller could not establish a finite reference measurement.
class InitializationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace stabguard
