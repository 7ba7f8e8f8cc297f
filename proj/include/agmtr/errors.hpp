#pragma once

#include <stdexcept>
#include <string>

namespace agmtr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyMask : public Error {
 public:
  using Error::Error;
};

class ZeroVector : public Error {
 public:
  using Error::Error;
};

class AllMaskedRow : public Error {
 public:
  using Error::Error;
};

class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InsufficientImages : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class EmptyAccumulator : public Error {
 public:
  using Error::Error;
};

// Soft warnings (Sinkhorn non-convergence during training, degenerate
// supports) go through here so tests can silence or count them.
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);
long warning_count();

}  // namespace agmtr
