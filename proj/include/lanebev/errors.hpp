#pragma once

#include <stdexcept>
#include <string>

namespace lanebev {

/// Root of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class WidthMismatch : public ShapeMismatch {
 public:
  using ShapeMismatch::ShapeMismatch;
};

class NonPositiveDepth : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DegenerateScene : public Error {
 public:
  using Error::Error;
};

class DegenerateLane : public Error {
 public:
  using Error::Error;
};

class NoForeground : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent user configuration. The CLI maps this to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingCheckpoint : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace lanebev
