#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace siamlite {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer geometry does not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `position()` is a byte offset for binary files
/// and a 1-based line number for text files.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t position)
      : Error(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace siamlite
