// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mlsgm/error.hpp"

namespace mlsgm::metrics {

namespace {

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }
double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw ShapeError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (truth[order[k]] != 1) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(k + 1);
  }
  if (hits == 0.0) throw UndefinedClassError("average_precision: no positive samples");
  return sum / hits;
}

PrecisionRecall classification_report(const Tensor& scores, std::span<const losses::TriStateLabels> truth,
                                      PredictionMode mode, double threshold) {
  if (scores.rank() != 2 || scores.rows() != truth.size()) throw ShapeError("classification_report: shape mismatch");
  const std::size_t n = scores.rows(), c = scores.cols();
  std::vector<double> tp(c, 0.0), fp(c, 0.0), fn(c, 0.0);
  std::vector<std::size_t> order(c);
  std::vector<bool> predicted(c);
  for (std::size_t i = 0; i < n; ++i) {
    if (truth[i].size() != c) throw ShapeError("classification_report: label length mismatch");
    if (mode == PredictionMode::kThreshold) {
      for (std::size_t k = 0; k < c; ++k) predicted[k] = scores(i, k) > threshold;
    } else {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(i, a) > scores(i, b); });
      std::fill(predicted.begin(), predicted.end(), false);
      for (std::size_t k = 0; k < std::min<std::size_t>(3, c); ++k) predicted[order[k]] = true;
    }
    for (std::size_t k = 0; k < c; ++k) {
      const int y = truth[i][k];
      if (y == 0) continue;
      if (predicted[k] && y == 1) tp[k] += 1.0;
      else if (predicted[k]) fp[k] += 1.0;
      else if (y == 1) fn[k] += 1.0;
    }
  }
  PrecisionRecall r;
  double TP = 0.0, FP = 0.0, FN = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    r.CP += ratio(tp[k], tp[k] + fp[k]);
    r.CR += ratio(tp[k], tp[k] + fn[k]);
    TP += tp[k];
    FP += fp[k];
    FN += fn[k];
  }
  if (c > 0) {
    r.CP /= static_cast<double>(c);
    r.CR /= static_cast<double>(c);
  }
  r.CF1 = f1(r.CP, r.CR);
  r.OP = ratio(TP, TP + FP);
  r.OR = ratio(TP, TP + FN);
  r.OF1 = f1(r.OP, r.OR);
  return r;
}

EvalReport evaluate(const Tensor& scores, std::span<const losses::TriStateLabels> truth) {
  if (scores.rank() != 2 || scores.rows() != truth.size()) throw ShapeError("evaluate: shape mismatch");
  EvalReport report;
  const std::size_t c = scores.cols();
  report.per_class_ap.assign(c, std::nullopt);
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t k = 0; k < c; ++k) {
    s.clear();
    y.clear();
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i][k] == 0) continue;
      s.push_back(scores(i, k));
      y.push_back(truth[i][k] == 1 ? 1 : 0);
    }
    try {
      const double ap = average_precision(s, y);
      report.per_class_ap[k] = ap;
      total += ap;
      ++counted;
    } catch (const UndefinedClassError&) {
    }
  }
  report.mAP = counted ? total / static_cast<double>(counted) : 0.0;
  report.all = classification_report(scores, truth, PredictionMode::kThreshold);
  report.top3 = classification_report(scores, truth, PredictionMode::kTop3);
  return report;
}

}  // namespace mlsgm::metrics
