#pragma once

#include <stdexcept>
#include <string>

namespace relmask {

/// Operand shapes are incompatible with the requested op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A forward op produced NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Backward was asked for something the tape cannot provide.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class PlacementInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Instruction text does not follow the pick-and-place template.
class NonTemplateInstruction : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnknownColor : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnknownLocation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NoMatchingObject : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AmbiguousPick : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDetections : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated checkpoint / dataset file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relmask
