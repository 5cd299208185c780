// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mlsgm {

/// Tensor or matrix extents do not chain.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An object was used in the wrong lifecycle state (e.g. backward twice).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or unreadable input data: files, manifests, label vectors.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary tensor file problems. `kind` distinguishes the three failure modes.
class FormatError : public DataError {
 public:
  enum class Kind { kBadMagic, kTruncated, kDimOverflow, kIo };
  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Invalid or incomplete run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mlsgm
