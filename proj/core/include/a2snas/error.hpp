#pragma once

#include <stdexcept>
#include <string>

namespace a2snas {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside the operation's domain (bad label, bad window, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A file or text document is malformed, truncated or inconsistent.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The autodiff tape was misused (e.g. backward called twice).
class TapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace a2snas
