// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlsgm/error.hpp"

namespace mlsgm::losses {

namespace {

constexpr double kHi = 1.0 - kProbabilityFloor;

double clamp_p(double p) { return std::clamp(p, kProbabilityFloor, kHi); }

// d/dp log(clamp(p)) and d/dp log(1 - clamp(p)).
double dlog(double p) { return (p > kProbabilityFloor && p < kHi) ? 1.0 / p : 0.0; }
double dlog1m(double p) { return (p > kProbabilityFloor && p < kHi) ? -1.0 / (1.0 - p) : 0.0; }

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": prediction and label lengths differ");
}

// x^e for x >= 0, with 0^0 = 1.
double power(double x, double e) { return e == 0.0 ? 1.0 : std::pow(x, e); }

// d/dx x^e, taken as 0 where it would be singular at x = 0.
double dpower(double x, double e) {
  if (e == 0.0) return 0.0;
  if (x == 0.0) return e == 1.0 ? 1.0 : 0.0;
  return e * std::pow(x, e - 1.0);
}

std::vector<double> row_values(ad::Var p) {
  const auto& t = p.value();
  if (t.rank() != 2 || t.rows() != 1) throw ShapeError("loss expects a 1 x C prediction row");
  return {t.data().begin(), t.data().end()};
}

ad::Var loss_node(ad::Var p, double value, std::vector<double> grad) {
  return p.tape().record(Tensor({1, 1}, std::vector<double>{value}), {p},
                         [p, grad = std::move(grad)](ad::Tape& t, const Tensor& g) {
                           const double g0 = g.data()[0];
                           auto dp = t.grad_slot(p).data();
                           for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g0 * grad[i];
                         });
}

}  // namespace

void validate_labels(std::span<const int> labels, std::size_t classes, bool allow_unknown) {
  if (labels.size() != classes)
    throw DataError("label vector has length " + std::to_string(labels.size()) + ", expected " +
                    std::to_string(classes));
  for (int v : labels) {
    if (v == 1 || v == -1) continue;
    if (v == 0 && allow_unknown) continue;
    throw DataError("label value " + std::to_string(v) + " is not a valid label state");
  }
}

std::vector<int> to_binary(std::span<const int> labels) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == 1 ? 1 : 0;
  return out;
}

std::vector<double> class_priors(std::span<const TriStateLabels> labels, std::size_t classes) {
  std::vector<double> r(classes, 0.0);
  if (labels.empty()) return std::vector<double>(classes, 0.5);
  for (const auto& y : labels) {
    require_same(y.size(), classes, "class_priors");
    for (std::size_t c = 0; c < classes; ++c)
      if (y[c] == 1) r[c] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  const double lo = 1.0 / (2.0 * n);
  for (auto& v : r) v = std::clamp(v / n, lo, 1.0 - lo);
  return r;
}

std::vector<double> max_pool(const Tensor& scores) {
  if (scores.rank() != 2 || scores.rows() == 0) throw ShapeError("max_pool expects a non-empty matrix");
  std::vector<double> p(scores.cols());
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    p[c] = scores(0, c);
    for (std::size_t i = 1; i < scores.rows(); ++i) p[c] = std::max(p[c], scores(i, c));
  }
  return p;
}

double bce(std::span<const double> p, std::span<const int> y) {
  require_same(p.size(), y.size(), "bce");
  double loss = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c)
    loss -= y[c] ? std::log(clamp_p(p[c])) : std::log(1.0 - clamp_p(p[c]));
  return loss;
}

std::vector<double> imbalance_weights(std::span<const int> y, std::span<const double> priors, double beta) {
  require_same(y.size(), priors.size(), "imbalance_weights");
  std::vector<double> w(y.size());
  for (std::size_t c = 0; c < y.size(); ++c)
    w[c] = y[c] ? std::exp(beta * (1.0 - priors[c])) : std::exp(beta * priors[c]);
  return w;
}

double weighted_bce(std::span<const double> p, std::span<const int> y, std::span<const double> priors, double beta) {
  require_same(p.size(), y.size(), "weighted_bce");
  const auto w = imbalance_weights(y, priors, beta);
  double loss = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c)
    loss -= w[c] * (y[c] ? std::log(clamp_p(p[c])) : std::log(1.0 - clamp_p(p[c])));
  return loss;
}

std::vector<double> weighted_bce_grad(std::span<const double> p, std::span<const int> y,
                                      std::span<const double> priors, double beta) {
  require_same(p.size(), y.size(), "weighted_bce");
  const auto w = imbalance_weights(y, priors, beta);
  std::vector<double> g(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) g[c] = -w[c] * (y[c] ? dlog(p[c]) : dlog1m(p[c]));
  return g;
}

double label_proportion_weight(double known_fraction, const PartialBceParams& params) {
  return params.alpha * std::pow(known_fraction, params.mu) + params.theta;
}

namespace {

double partial_scale(std::span<const int> labels, const PartialBceParams& params) {
  std::size_t known = 0;
  for (int v : labels) known += v != 0;
  if (known == 0) throw DataError("partial_bce: every label is unknown");
  const double c = static_cast<double>(labels.size());
  return label_proportion_weight(static_cast<double>(known) / c, params) / c;
}

}  // namespace

double partial_bce(std::span<const double> p, std::span<const int> labels, const PartialBceParams& params) {
  require_same(p.size(), labels.size(), "partial_bce");
  const double scale = partial_scale(labels, params);
  double sum = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (labels[c] == 1) sum += std::log(clamp_p(p[c]));
    else if (labels[c] == -1) sum += std::log(1.0 - clamp_p(p[c]));
  }
  return -scale * sum;
}

std::vector<double> partial_bce_grad(std::span<const double> p, std::span<const int> labels,
                                     const PartialBceParams& params) {
  require_same(p.size(), labels.size(), "partial_bce");
  const double scale = partial_scale(labels, params);
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (labels[c] == 1) g[c] = -scale * dlog(p[c]);
    else if (labels[c] == -1) g[c] = -scale * dlog1m(p[c]);
  }
  return g;
}

double asymmetric_focal(std::span<const double> p, std::span<const int> y, const FocalParams& params) {
  require_same(p.size(), y.size(), "asymmetric_focal");
  double loss = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (y[c]) {
      loss -= power(1.0 - p[c], params.gamma_pos) * std::log(clamp_p(p[c]));
    } else {
      const double q = std::max(p[c] - params.margin, 0.0);
      loss -= power(q, params.gamma_neg) * std::log(1.0 - clamp_p(q));
    }
  }
  return loss;
}

std::vector<double> asymmetric_focal_grad(std::span<const double> p, std::span<const int> y,
                                          const FocalParams& params) {
  require_same(p.size(), y.size(), "asymmetric_focal");
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (y[c]) {
      const double base = 1.0 - p[c];
      // d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p
      g[c] = dpower(base, params.gamma_pos) * std::log(clamp_p(p[c])) -
             power(base, params.gamma_pos) * dlog(p[c]);
    } else {
      if (!(p[c] > params.margin)) continue;
      const double q = p[c] - params.margin;
      // d/dq [-q^g log(1-q)] with dq/dp = 1
      g[c] = -dpower(q, params.gamma_neg) * std::log(1.0 - clamp_p(q)) - power(q, params.gamma_neg) * dlog1m(q);
    }
  }
  return g;
}

ad::Var max_pool(ad::Var scores) { return ad::col_max(scores); }

ad::Var weighted_bce(ad::Var p, std::span<const int> y, std::span<const double> priors, double beta) {
  const auto pv = row_values(p);
  return loss_node(p, weighted_bce(pv, y, priors, beta), weighted_bce_grad(pv, y, priors, beta));
}

ad::Var partial_bce(ad::Var p, std::span<const int> labels, const PartialBceParams& params) {
  const auto pv = row_values(p);
  return loss_node(p, partial_bce(pv, labels, params), partial_bce_grad(pv, labels, params));
}

ad::Var asymmetric_focal(ad::Var p, std::span<const int> y, const FocalParams& params) {
  const auto pv = row_values(p);
  return loss_node(p, asymmetric_focal(pv, y, params), asymmetric_focal_grad(pv, y, params));
}

}  // namespace mlsgm::losses
