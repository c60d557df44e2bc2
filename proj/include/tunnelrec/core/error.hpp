#pragma once

#include <stdexcept>
#include <string>

namespace tunnelrec {

// Base of every error the library throws. Callers that only care about
// "something in the reconstruction failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Point at or behind the image plane.
class PointBehindCamera : public Error {
 public:
  using Error::Error;
};

// Iterative solver stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// A ray left a closed prior, a camera sits outside it, or similar
// conditions that can only come from inconsistent geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tunnelrec
