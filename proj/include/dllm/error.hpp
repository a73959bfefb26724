#pragma once

#include <stdexcept>
#include <string>

namespace dllm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model / run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor, layout or cache dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Position or block range outside the sequence.
class RangeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Cache used outside the block cycle it was refreshed for.
class StalenessError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Decode loop invariant broken (e.g. a step that unmasks nothing).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input document. `what()` carries the field path.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace dllm
