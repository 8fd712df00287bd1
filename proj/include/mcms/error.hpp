#pragma once

#include <stdexcept>
#include <string>

namespace mcms {

// All library failures surface as mcms::Error so callers (the CLI in
// particular) can turn them into a one-line diagnostic.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

[[noreturn]] inline void fail(const std::string &msg) { throw Error(msg); }
[[noreturn]] inline void shape_fail(const std::string &msg) {
  throw ShapeError(msg);
}

} // namespace mcms
