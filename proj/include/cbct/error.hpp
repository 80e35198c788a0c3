#pragma once

#include <stdexcept>
#include <string>

namespace cbct {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ray parallel to a detector plane, zero-length direction, and similar.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Manifest or sidecar document that does not follow the schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver or optimizer left the finite/bounded regime.
class Divergence : public Error {
 public:
  using Error::Error;
};

}  // namespace cbct
