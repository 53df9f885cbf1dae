// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dyconv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyper-parameter or layer/network configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation used in a state it does not support (e.g. eval BN without stats).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A mathematical precondition (simplex, sum-to-one) was violated upstream.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace dyconv
