#pragma once

#include <stdexcept>
#include <string>

namespace chromalayer {

/// Base for every error raised by the library. Callers that only need a
/// message can catch std::runtime_error.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violated a documented precondition.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A file or payload could not be decoded.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Filesystem level failure (unreadable / unwritable path).
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace chromalayer
