#pragma once

#include <stdexcept>
#include <string>

namespace cavm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An operation produced NaN or Inf from finite inputs.
class NumericFault : public Error {
public:
    using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar loss, repeated backward).
class AutodiffError : public Error {
public:
    using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (bad magic, bad header, unsupported version).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure or truncated file.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace cavm
