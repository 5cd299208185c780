// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mlsgm/autodiff.hpp"
#include "mlsgm/param_store.hpp"
#include "mlsgm/rng.hpp"

namespace mlsgm {

/// Multilayer perceptron whose weights live in a ParamStore under
/// "<prefix>.w<l>" (out x in) and "<prefix>.b<l>" (1 x out).
/// Rectifier between layers, none after the last unless `logistic_output`.
class Mlp {
 public:
  Mlp() = default;

  /// Registers freshly initialized layers: weights uniform in
  /// +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static Mlp create(ParamStore& store, std::string prefix, std::vector<std::size_t> dims,
                    bool logistic_output, SplitMix64& rng);
  /// Binds to layers that already exist in a store (e.g. loaded from disk).
  static Mlp bind(const ParamStore& store, std::string prefix, std::vector<std::size_t> dims,
                  bool logistic_output);

  ad::Var forward(ad::Tape& tape, ad::Var x) const;

  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t layers() const { return dims_.size() - 1; }
  const std::string& prefix() const { return prefix_; }
  bool logistic_output() const { return logistic_; }
  std::string weight_name(std::size_t layer) const { return prefix_ + ".w" + std::to_string(layer); }
  std::string bias_name(std::size_t layer) const { return prefix_ + ".b" + std::to_string(layer); }
  /// Sum over layers of out * (in + 1).
  std::size_t parameter_count() const;

 private:
  std::string prefix_;
  std::vector<std::size_t> dims_;
  bool logistic_ = false;
};

}  // namespace mlsgm
