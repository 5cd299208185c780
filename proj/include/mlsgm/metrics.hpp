// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mlsgm/losses.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::metrics {

/// Raised by average_precision for a class without positives.
class UndefinedClassError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-interpolated AP: mean of precision@k over the ranks k of positives,
/// ranking by descending score with ties to the smaller sample index.
double average_precision(std::span<const double> scores, std::span<const int> truth);

enum class PredictionMode { kThreshold, kTop3 };

struct PrecisionRecall {
  double CP = 0.0, CR = 0.0, CF1 = 0.0;
  double OP = 0.0, OR = 0.0, OF1 = 0.0;
};

/// `scores` is N x C; truth holds N tri-state vectors whose unknown entries
/// are left out of every count.
PrecisionRecall classification_report(const Tensor& scores, std::span<const losses::TriStateLabels> truth,
                                      PredictionMode mode = PredictionMode::kThreshold, double threshold = 0.5);

struct EvalReport {
  double mAP = 0.0;
  PrecisionRecall all;
  PrecisionRecall top3;
  /// Empty for classes without a known positive (excluded from mAP).
  std::vector<std::optional<double>> per_class_ap;
};

EvalReport evaluate(const Tensor& scores, std::span<const losses::TriStateLabels> truth);

}  // namespace mlsgm::metrics
