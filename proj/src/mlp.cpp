// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/mlp.hpp"

#include <cmath>

#include "mlsgm/error.hpp"

namespace mlsgm {

namespace {

void check_dims(const std::vector<std::size_t>& dims, const std::string& prefix) {
  if (dims.size() < 2) throw ShapeError("mlp " + prefix + " needs at least one layer");
  for (auto d : dims)
    if (d == 0) throw ShapeError("mlp " + prefix + " has a zero-width layer");
}

}  // namespace

Mlp Mlp::create(ParamStore& store, std::string prefix, std::vector<std::size_t> dims,
                bool logistic_output, SplitMix64& rng) {
  check_dims(dims, prefix);
  Mlp net;
  net.prefix_ = std::move(prefix);
  net.dims_ = std::move(dims);
  net.logistic_ = logistic_output;
  for (std::size_t l = 0; l + 1 < net.dims_.size(); ++l) {
    const std::size_t in = net.dims_[l], out = net.dims_[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w = Tensor::matrix(out, in);
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
    store.add(net.weight_name(l), std::move(w));
    store.add(net.bias_name(l), Tensor::matrix(1, out));
  }
  return net;
}

Mlp Mlp::bind(const ParamStore& store, std::string prefix, std::vector<std::size_t> dims,
              bool logistic_output) {
  check_dims(dims, prefix);
  Mlp net;
  net.prefix_ = std::move(prefix);
  net.dims_ = std::move(dims);
  net.logistic_ = logistic_output;
  for (std::size_t l = 0; l + 1 < net.dims_.size(); ++l) {
    require_matrix(store.get(net.weight_name(l)).value, net.dims_[l + 1], net.dims_[l], "mlp weight");
    require_matrix(store.get(net.bias_name(l)).value, 1, net.dims_[l + 1], "mlp bias");
  }
  return net;
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const {
  if (x.value().rank() != 2 || x.value().cols() != input_dim()) {
    throw ShapeError("mlp " + prefix_ + ": expected input width " + std::to_string(input_dim()) +
                     ", got " + shape_string(x.value().shape()));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < layers(); ++l) {
    h = ad::linear(h, tape.param(weight_name(l)), tape.param(bias_name(l)));
    if (l + 1 < layers()) h = ad::relu(h);
  }
  return logistic_ ? ad::sigmoid(h) : h;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers(); ++l) n += dims_[l + 1] * (dims_[l] + 1);
  return n;
}

}  // namespace mlsgm
