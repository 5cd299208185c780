// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlsgm/error.hpp"

namespace mlsgm::ad {

namespace {

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, -1, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(std::string_view name) {
  if (!store_) throw StateError("tape has no parameter store");
  auto idx = store_->find(name);
  if (!idx) throw StateError("unknown parameter: " + std::string(name));
  if (auto it = param_nodes_.find(*idx); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{store_->at(*idx).value, {}, {}, static_cast<int>(*idx), true});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(*idx, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape_ != this) throw StateError("operand recorded on a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, -1, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::grad_slot(Var v) {
  auto& node = nodes_[v.id()];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_[v.id()];
  if (node.grad.shape() != node.value.shape()) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (consumed_) throw StateError("backward called twice on the same tape; run a new forward pass");
  if (!loss.valid() || loss.tape_ != this || nodes_.empty())
    throw StateError("backward without a recorded forward pass");
  const auto& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_string(lv.shape()));
  if (store_ && !mutable_store_) throw StateError("backward on an inference-only tape");
  consumed_ = true;

  grad_slot(loss).data()[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    auto& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
  }
  for (const auto& [pidx, id] : param_nodes_) {
    const auto& node = nodes_[id];
    if (node.grad.shape() == node.value.shape()) add_into(mutable_store_->at(pidx).grad, node.grad);
  }
}

Var linear(Var x, Var weight, Var bias) {
  const auto& X = x.value();
  const auto& W = weight.value();
  const auto& b = bias.value();
  require_2d(X, "linear");
  require_2d(W, "linear");
  const std::size_t n = X.rows(), in = X.cols(), out = W.rows();
  if (W.cols() != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " +
                     shape_string(W.shape()));
  if (b.size() != out) throw ShapeError("linear: bias length does not match weight rows");

  Tensor y = Tensor::matrix(n, out);
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = X.row(i);
    for (std::size_t o = 0; o < out; ++o) {
      auto wo = W.row(o);
      double acc = bd[o];
      for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
      y(i, o) = acc;
    }
  }
  return x.tape().record(std::move(y), {x, weight, bias}, [x, weight, bias](Tape& t, const Tensor& g) {
    const auto& X = t.value(x);
    const auto& W = t.value(weight);
    const std::size_t n = X.rows(), in = X.cols(), out = W.rows();
    if (t.requires_grad(x)) {
      auto& dx = t.grad_slot(x);
      for (std::size_t i = 0; i < n; ++i) {
        auto dxi = dx.row(i);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g(i, o);
          if (go == 0.0) continue;
          auto wo = W.row(o);
          for (std::size_t k = 0; k < in; ++k) dxi[k] += go * wo[k];
        }
      }
    }
    if (t.requires_grad(weight)) {
      auto& dw = t.grad_slot(weight);
      for (std::size_t i = 0; i < n; ++i) {
        auto xi = X.row(i);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g(i, o);
          if (go == 0.0) continue;
          auto dwo = dw.row(o);
          for (std::size_t k = 0; k < in; ++k) dwo[k] += go * xi[k];
        }
      }
    }
    if (t.requires_grad(bias)) {
      auto db = t.grad_slot(bias).data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) db[o] += g(i, o);
    }
  });
}

Var matmul_tn(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require_2d(A, "matmul_tn");
  require_2d(B, "matmul_tn");
  if (A.rows() != B.rows()) throw ShapeError("matmul_tn: leading extents differ");
  const std::size_t k = A.rows(), m = A.cols(), n = B.cols();
  Tensor y = Tensor::matrix(m, n);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < m; ++i) {
      const double air = A(r, i);
      if (air == 0.0) continue;
      auto br = B.row(r);
      auto yi = y.row(i);
      for (std::size_t j = 0; j < n; ++j) yi[j] += air * br[j];
    }
  return a.tape().record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    const std::size_t k = A.rows(), m = A.cols(), n = B.cols();
    if (t.requires_grad(a)) {
      auto& da = t.grad_slot(a);
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g(i, j) * B(r, j);
          da(r, i) += acc;
        }
    }
    if (t.requires_grad(b)) {
      auto& db = t.grad_slot(b);
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t i = 0; i < m; ++i) {
          const double air = A(r, i);
          for (std::size_t j = 0; j < n; ++j) db(r, j) += air * g(i, j);
        }
    }
  });
}

Var relu(Var x) {
  Tensor y = x.value();
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    auto xv = t.value(x).data();
    auto dx = t.grad_slot(x).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xv[i] > 0.0) dx[i] += gd[i];
  });
}

Var sigmoid(Var x) {
  Tensor y = x.value();
  for (auto& v : y.data()) v = 1.0 / (1.0 + std::exp(-std::clamp(v, -30.0, 30.0)));
  Tensor saved = x.tape().requires_grad(x) ? y : Tensor{};
  return x.tape().record(std::move(y), {x}, [x, saved = std::move(saved)](Tape& t, const Tensor& g) {
    auto xv = t.value(x).data();
    auto yv = saved.data();
    auto dx = t.grad_slot(x).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] < -30.0 || xv[i] > 30.0) continue;
      dx[i] += gd[i] * yv[i] * (1.0 - yv[i]);
    }
  });
}

Var add(Var a, Var b) {
  if (a.value().shape() != b.value().shape()) throw ShapeError("add: shape mismatch");
  Tensor y = a.value();
  auto bd = b.value().data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bd[i];
  return a.tape().record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) add_into(t.grad_slot(a), g);
    if (t.requires_grad(b)) add_into(t.grad_slot(b), g);
  });
}

Var scale(Var x, double factor) {
  Tensor y = x.value();
  for (auto& v : y.data()) v *= factor;
  return x.tape().record(std::move(y), {x}, [x, factor](Tape& t, const Tensor& g) {
    auto dx = t.grad_slot(x).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * gd[i];
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return x.tape().record(Tensor({1, 1}, std::vector<double>{acc}), {x}, [x](Tape& t, const Tensor& g) {
    const double g0 = g.data()[0];
    for (auto& d : t.grad_slot(x).data()) d += g0;
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t width = 0;
  for (const auto& p : parts) {
    require_2d(p.value(), "concat_cols");
    if (p.value().rows() != n) throw ShapeError("concat_cols: row counts differ");
    offsets.push_back(width);
    width += p.value().cols();
  }
  Tensor y = Tensor::matrix(n, width);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& P = parts[k].value();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(P.row(i).begin(), P.cols(), y.row(i).begin() + offsets[k]);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(y), parts, [inputs, offsets](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!t.requires_grad(inputs[k])) continue;
      auto& d = t.grad_slot(inputs[k]);
      const std::size_t w = d.cols();
      for (std::size_t i = 0; i < d.rows(); ++i) {
        auto gi = g.row(i);
        auto di = d.row(i);
        for (std::size_t j = 0; j < w; ++j) di[j] += gi[offsets[k] + j];
      }
    }
  });
}

Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t w = parts[0].value().cols();
  std::vector<std::size_t> offsets;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_2d(p.value(), "concat_rows");
    if (p.value().cols() != w) throw ShapeError("concat_rows: column counts differ");
    offsets.push_back(n);
    n += p.value().rows();
  }
  Tensor y = Tensor::matrix(n, w);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].value().data();
    std::copy(src.begin(), src.end(), y.data().begin() + offsets[k] * w);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(y), parts, [inputs, offsets, w](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!t.requires_grad(inputs[k])) continue;
      auto d = t.grad_slot(inputs[k]).data();
      auto gd = g.data().subspan(offsets[k] * w, d.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i];
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  const auto& X = x.value();
  require_2d(X, "gather_rows");
  const std::size_t w = X.cols();
  Tensor y = Tensor::matrix(index.size(), w);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(X.row(index[i]).begin(), w, y.row(i).begin());
  }
  return x.tape().record(std::move(y), {x}, [x, index = std::move(index)](Tape& t, const Tensor& g) {
    auto& dx = t.grad_slot(x);
    const std::size_t w = dx.cols();
    for (std::size_t i = 0; i < index.size(); ++i) {
      auto gi = g.row(i);
      auto di = dx.row(index[i]);
      for (std::size_t j = 0; j < w; ++j) di[j] += gi[j];
    }
  });
}

Var gather_cols(Var x, std::vector<std::size_t> index) {
  const auto& X = x.value();
  require_2d(X, "gather_cols");
  Tensor y = Tensor::matrix(X.rows(), index.size());
  for (std::size_t j = 0; j < index.size(); ++j)
    if (index[j] >= X.cols()) throw ShapeError("gather_cols: index out of range");
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < index.size(); ++j) y(i, j) = X(i, index[j]);
  return x.tape().record(std::move(y), {x}, [x, index = std::move(index)](Tape& t, const Tensor& g) {
    auto& dx = t.grad_slot(x);
    for (std::size_t i = 0; i < dx.rows(); ++i)
      for (std::size_t j = 0; j < index.size(); ++j) dx(i, index[j]) += g(i, j);
  });
}

Var segment_mean(Var x, std::vector<std::size_t> segment, std::size_t segments) {
  const auto& X = x.value();
  require_2d(X, "segment_mean");
  if (segment.size() != X.rows()) throw ShapeError("segment_mean: one segment id per row required");
  const std::size_t w = X.cols();
  std::vector<double> count(segments, 0.0);
  for (auto s : segment) {
    if (s >= segments) throw ShapeError("segment_mean: segment id out of range");
    count[s] += 1.0;
  }
  Tensor y = Tensor::matrix(segments, w);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    auto xr = X.row(r);
    auto ys = y.row(segment[r]);
    for (std::size_t j = 0; j < w; ++j) ys[j] += xr[j];
  }
  for (std::size_t s = 0; s < segments; ++s)
    if (count[s] > 0)
      for (auto& v : y.row(s)) v /= count[s];
  return x.tape().record(std::move(y), {x},
                         [x, segment = std::move(segment), count = std::move(count)](Tape& t, const Tensor& g) {
                           auto& dx = t.grad_slot(x);
                           const std::size_t w = dx.cols();
                           for (std::size_t r = 0; r < segment.size(); ++r) {
                             const double inv = 1.0 / count[segment[r]];
                             auto gs = g.row(segment[r]);
                             auto dr = dx.row(r);
                             for (std::size_t j = 0; j < w; ++j) dr[j] += inv * gs[j];
                           }
                         });
}

Var mean_rows(Var x) {
  const auto& X = x.value();
  require_2d(X, "mean_rows");
  if (X.rows() == 0) throw ShapeError("mean_rows: empty input");
  Tensor y = Tensor::matrix(1, X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) y(0, j) += X(i, j);
  const double inv = 1.0 / static_cast<double>(X.rows());
  for (auto& v : y.data()) v *= inv;
  return x.tape().record(std::move(y), {x}, [x, inv](Tape& t, const Tensor& g) {
    auto& dx = t.grad_slot(x);
    for (std::size_t i = 0; i < dx.rows(); ++i)
      for (std::size_t j = 0; j < dx.cols(); ++j) dx(i, j) += inv * g(0, j);
  });
}

Var col_max(Var x) {
  const auto& X = x.value();
  require_2d(X, "col_max");
  if (X.rows() == 0) throw ShapeError("col_max: empty input");
  Tensor y = Tensor::matrix(1, X.cols());
  std::vector<std::size_t> arg(X.cols(), 0);
  for (std::size_t j = 0; j < X.cols(); ++j) {
    double best = X(0, j);
    for (std::size_t i = 1; i < X.rows(); ++i)
      if (X(i, j) > best) {
        best = X(i, j);
        arg[j] = i;
      }
    y(0, j) = best;
  }
  return x.tape().record(std::move(y), {x}, [x, arg = std::move(arg)](Tape& t, const Tensor& g) {
    auto& dx = t.grad_slot(x);
    for (std::size_t j = 0; j < arg.size(); ++j) dx(arg[j], j) += g(0, j);
  });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.value().size()) throw ShapeError("reshape: element count changes");
  Tensor y = x.value().reshaped({rows, cols});
  return x.tape().record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    auto dx = t.grad_slot(x).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gd[i];
  });
}

double finite_diff_check(ParamStore& store, const LossFn& loss_fn, double step) {
  store.zero_grad();
  {
    Tape tape(&store);
    tape.backward(loss_fn(tape));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(store.size());
  for (const auto& p : store.params()) analytic.push_back(p.grad);
  store.zero_grad();

  auto evaluate = [&]() {
    Tape tape(&store);
    return loss_fn(tape).value().data()[0];
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    auto values = store.at(pi).value.data();
    auto grads = analytic[pi].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate();
      values[i] = saved - step;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, std::abs(grads[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace mlsgm::ad
