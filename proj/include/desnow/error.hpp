#pragma once

#include <stdexcept>
#include <string>

namespace desnow {

// Every failure surfaced by the library derives from Error so the CLI can map
// it onto an exit code in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public IoError {
 public:
  using IoError::IoError;
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace desnow
