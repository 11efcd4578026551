#pragma once

#include <stdexcept>
#include <string>

namespace autoret {

// Base for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad command-line or config input. Maps to exit code 2.
class UsageError : public Error {
  public:
    using Error::Error;
};

// Malformed or incompatible on-disk artifact.
class FormatError : public Error {
  public:
    using Error::Error;
};

// External teacher could not be reached or timed out; the caller may retry.
class TeacherUnavailable : public Error {
  public:
    using Error::Error;
};

// External teacher replied with something that violates the wire protocol.
class ProtocolError : public Error {
  public:
    using Error::Error;
};

} // namespace autoret
