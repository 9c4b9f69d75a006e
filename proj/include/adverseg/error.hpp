#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adverseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class AxisError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Batch norm in train mode needs at least two values per channel.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient or loss; the message names the offending term.
class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class VersionError : public FormatError {
 public:
  VersionError(unsigned found, unsigned expected, std::size_t offset)
      : FormatError("unsupported checkpoint version " + std::to_string(found) +
                        " (expected " + std::to_string(expected) + ")",
                    offset),
        found_(found) {}

  unsigned found() const noexcept { return found_; }

 private:
  unsigned found_;
};

}  // namespace adverseg
