// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlsgm/tensor.hpp"

namespace mlsgm {

/// One trainable tensor with its gradient slot and momentum buffer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;
  /// Rows excluded from optimizer updates (value and momentum left untouched).
  std::vector<bool> frozen_rows;
};

/// Named, insertion-ordered collection of trainable tensors.
class ParamStore {
 public:
  /// Throws StateError on a duplicate name.
  Param& add(std::string name, Tensor init);

  std::optional<std::size_t> find(std::string_view name) const;
  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;
  Param& at(std::size_t index) { return params_[index]; }
  const Param& at(std::size_t index) const { return params_[index]; }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept;
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  void zero_grad();
  /// Freezes (or unfreezes) rows [first, last) of the named parameter.
  void set_frozen_rows(std::string_view name, std::size_t first, std::size_t last, bool frozen = true);
  void clear_frozen();

  /// Rounds every value to float32 precision, the on-disk storage type.
  void round_to_storage_precision();

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Momentum SGD with L2 weight decay folded into the gradient:
///   v <- momentum * v + (g + weight_decay * theta);  theta <- theta - lr * v.
/// Gradients are zeroed afterwards.
void sgd_step(ParamStore& store, double lr, const SgdOptions& options = {});

/// Step schedule: lr0 * factor^(floor(epoch / step)).
double step_learning_rate(double lr0, std::size_t epoch, std::size_t step, double factor = 0.1);

}  // namespace mlsgm
