// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Cross-instance max pooling and the three training objectives. Each loss is
// a minimized negative log-likelihood with probabilities clamped to
// [1e-12, 1 - 1e-12] inside the logarithms.

#include <cstddef>
#include <span>
#include <vector>

#include "mlsgm/autodiff.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::losses {

inline constexpr double kProbabilityFloor = 1e-12;

/// Per-image labels: +1 present, -1 absent, 0 unknown.
using TriStateLabels = std::vector<int>;

/// Throws DataError on values outside {+1, -1, 0} or a length other than `classes`.
void validate_labels(std::span<const int> labels, std::size_t classes, bool allow_unknown = true);
/// Maps +1 -> 1 and everything else -> 0.
std::vector<int> to_binary(std::span<const int> labels);

struct PartialBceParams {
  double alpha = -4.45;
  double theta = 5.45;
  double mu = 1.0;
};

struct FocalParams {
  double gamma_pos = 0.0;
  double gamma_neg = 4.0;
  double margin = 0.05;
};

/// r^c = (#images with label c) / N, clamped to [1/(2N), 1 - 1/(2N)].
std::vector<double> class_priors(std::span<const TriStateLabels> labels, std::size_t classes);

/// p^c = max over rows of S[:, c].
std::vector<double> max_pool(const Tensor& scores);

/// Plain binary cross-entropy summed over classes.
double bce(std::span<const double> p, std::span<const int> y);

/// w^c = y^c e^{beta (1 - r^c)} + (1 - y^c) e^{beta r^c}.
std::vector<double> imbalance_weights(std::span<const int> y, std::span<const double> priors, double beta);
double weighted_bce(std::span<const double> p, std::span<const int> y, std::span<const double> priors, double beta);
std::vector<double> weighted_bce_grad(std::span<const double> p, std::span<const int> y,
                                      std::span<const double> priors, double beta);

/// g(r) = alpha r^mu + theta.
double label_proportion_weight(double known_fraction, const PartialBceParams& params);
/// Throws DataError when every label is unknown.
double partial_bce(std::span<const double> p, std::span<const int> labels, const PartialBceParams& params = {});
std::vector<double> partial_bce_grad(std::span<const double> p, std::span<const int> labels,
                                     const PartialBceParams& params = {});

double asymmetric_focal(std::span<const double> p, std::span<const int> y, const FocalParams& params = {});
std::vector<double> asymmetric_focal_grad(std::span<const double> p, std::span<const int> y,
                                          const FocalParams& params = {});

// Tape versions over a 1 x C prediction row.

ad::Var max_pool(ad::Var scores);
ad::Var weighted_bce(ad::Var p, std::span<const int> y, std::span<const double> priors, double beta);
ad::Var partial_bce(ad::Var p, std::span<const int> labels, const PartialBceParams& params = {});
ad::Var asymmetric_focal(ad::Var p, std::span<const int> y, const FocalParams& params = {});

}  // namespace mlsgm::losses
