// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every operation of one forward pass. Parameters enter the
// tape through Tape::param(), which snapshots the current ParamStore value;
// Tape::backward() propagates d(loss)/d(node) back through the tape and adds
// the result into each parameter's gradient slot, so several tapes (one per
// image) accumulate into the same store. A tape can be consumed only once.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mlsgm/param_store.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::ad {

class Tape;

/// Handle to a tape node.
class Var {
 public:
  Var() = default;
  bool valid() const noexcept { return tape_ != nullptr; }
  int id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(ParamStore* store = nullptr) : store_(store), mutable_store_(store) {}
  /// Inference-only tape: backward() is rejected.
  explicit Tape(const ParamStore& store) : store_(&store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Snapshot of a stored parameter; repeated calls return the same node.
  Var param(std::string_view name);

  /// Records an op. `fn` runs during backward only if some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Propagates from a 1x1 loss node and accumulates into the ParamStore.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient w.r.t. a node, valid after backward (zero tensor if unreached).
  Tensor grad(Var v) const;
  /// Gradient accumulator of an input; for use inside BackwardFn only.
  Tensor& grad_slot(Var v);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    int param = -1;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  const ParamStore* store_;
  ParamStore* mutable_store_ = nullptr;
  std::unordered_map<std::size_t, int> param_nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

// Operators. All take and return matrices.

/// x [n x in] * W^T [in x out] + b [1 x out].
Var linear(Var x, Var weight, Var bias);
/// A^T [m x k] * B [k x n], with A [k x m].
Var matmul_tn(Var a, Var b);
Var relu(Var x);
/// Logistic with inputs clamped to +-30.
Var sigmoid(Var x);
Var add(Var a, Var b);
Var scale(Var x, double factor);
/// Sum of all entries as 1x1.
Var sum(Var x);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var gather_rows(Var x, std::vector<std::size_t> index);
Var gather_cols(Var x, std::vector<std::size_t> index);
/// out[s] = mean of x rows with segment[r] == s; empty segments yield zeros.
Var segment_mean(Var x, std::vector<std::size_t> segment, std::size_t segments);
/// Column means as 1 x cols.
Var mean_rows(Var x);
/// Column maxima as 1 x cols; gradient goes to the first arg-max row.
Var col_max(Var x);
Var reshape(Var x, std::size_t rows, std::size_t cols);

/// Builds a loss on a tape whose parameters come from the given store.
using LossFn = std::function<Var(Tape&)>;

/// Compares backward() against central differences over every scalar
/// parameter: max |analytic - numeric| / max(1, |numeric|). The store's
/// gradients are left zeroed and its values unchanged.
double finite_diff_check(ParamStore& store, const LossFn& loss_fn, double step = 1e-4);

}  // namespace mlsgm::ad
