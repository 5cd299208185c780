// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/param_store.hpp"

#include "mlsgm/error.hpp"

namespace mlsgm {

Param& ParamStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw StateError("duplicate parameter name: " + name);
  Param p;
  p.name = name;
  p.grad = Tensor(init.shape(), 0.0);
  p.momentum = Tensor(init.shape(), 0.0);
  p.value = std::move(init);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Param& ParamStore::get(std::string_view name) {
  auto idx = find(name);
  if (!idx) throw StateError("unknown parameter: " + std::string(name));
  return params_[*idx];
}

const Param& ParamStore::get(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw StateError("unknown parameter: " + std::string(name));
  return params_[*idx];
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParamStore::set_frozen_rows(std::string_view name, std::size_t first, std::size_t last,
                                 bool frozen) {
  auto& p = get(name);
  if (p.frozen_rows.size() != p.value.rows()) p.frozen_rows.assign(p.value.rows(), false);
  if (last > p.value.rows() || first > last) throw ShapeError("frozen row range out of bounds");
  for (std::size_t r = first; r < last; ++r) p.frozen_rows[r] = frozen;
}

void ParamStore::clear_frozen() {
  for (auto& p : params_) p.frozen_rows.clear();
}

void ParamStore::round_to_storage_precision() {
  for (auto& p : params_)
    for (auto& v : p.value.data()) v = static_cast<double>(static_cast<float>(v));
}

void sgd_step(ParamStore& store, double lr, const SgdOptions& options) {
  for (auto& p : store.params()) {
    auto theta = p.value.data();
    auto grad = p.grad.data();
    auto vel = p.momentum.data();
    const std::size_t stride = p.value.cols();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!p.frozen_rows.empty() && stride && p.frozen_rows[i / stride]) continue;
      vel[i] = options.momentum * vel[i] + (grad[i] + options.weight_decay * theta[i]);
      theta[i] -= lr * vel[i];
    }
    p.grad.fill(0.0);
  }
}

double step_learning_rate(double lr0, std::size_t epoch, std::size_t step, double factor) {
  double lr = lr0;
  if (step == 0) return lr;
  for (std::size_t k = epoch / step; k > 0; --k) lr *= factor;
  return lr;
}

}  // namespace mlsgm
