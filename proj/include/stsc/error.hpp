#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stsc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or op parameters that violate an op's preconditions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (double backward, non-scalar loss, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind {
    Io,
    NotACheckpoint,
    UnsupportedVersion,
    UnexpectedEof,
    CrcMismatch,
    MissingTensor,
    ShapeMismatch,
    Malformed,
  };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Raised when training must stop, e.g. on a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step) : Error(what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace stsc
