#pragma once

#include <stdexcept>
#include <string>

namespace ctxbias {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (matrix files, COCO json, pair lists, checkpoints).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a data precondition.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised by trainers when a loss becomes non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctxbias
