#pragma once

#include <stdexcept>
#include <string>

namespace semcache {

// Base of every error thrown by the library. Callers that only need to know
// "something failed" can catch this; the subclasses tell them what.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad magic, unknown version, malformed header fields.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File is structurally valid but shorter than its header promises.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Vector norm at or below the degeneracy threshold.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

// Record id not present in an embedding set.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Operation not valid in the object's current state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (open, short write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace semcache
