// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "mlsgm/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mlsgm;
using metrics::PredictionMode;

namespace {

std::vector<losses::TriStateLabels> random_truth(std::size_t n, std::size_t c, std::uint64_t seed, bool unknowns) {
  SplitMix64 rng(seed);
  std::vector<losses::TriStateLabels> out(n, losses::TriStateLabels(c));
  for (auto& row : out)
    for (auto& v : row) v = unknowns ? static_cast<int>(rng.below(3)) - 1 : (rng.uniform() < 0.4 ? 1 : -1);
  return out;
}

}  // namespace

TEST_CASE("average_precision examples") {
  CHECK(metrics::average_precision(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}) == 1.0);
  CHECK(metrics::average_precision(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<int>{1, 0, 1, 0}) ==
        doctest::Approx(0.833333).epsilon(1e-6));
  CHECK(metrics::average_precision(std::vector<double>{0.4}, std::vector<int>{1}) == 1.0);
  CHECK_THROWS_AS(metrics::average_precision(std::vector<double>{0.4, 0.2}, std::vector<int>{0, 0}),
                  metrics::UndefinedClassError);
  SUBCASE("ties rank the smaller index first") {
    CHECK(metrics::average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
    CHECK(metrics::average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 1.0);
  }
}

TEST_CASE("average_precision matches enumeration") {
  SplitMix64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> s(n);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(5)) / 4.0;  // coarse grid forces ties
      t[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    t[rng.below(n)] = 1;
    CHECK(metrics::average_precision(s, t) == doctest::Approx(oracle::average_precision(s, t)).epsilon(1e-15));
  }
}

TEST_CASE("average_precision is invariant to monotone transforms") {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<double> s(n), s2(n);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform(-2.0, 2.0);
      s2[i] = std::exp(3.0 * s[i]) + 1.0;
      t[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    t[0] = 1;
    CHECK(metrics::average_precision(s, t) == metrics::average_precision(s2, t));
  }
}

TEST_CASE("classification_report examples") {
  SUBCASE("perfect predictions") {
    const Tensor s = Tensor::from_rows({{0.9, 0.1, 0.8}, {0.2, 0.7, 0.1}});
    const std::vector<losses::TriStateLabels> t{{1, -1, 1}, {-1, 1, -1}};
    const auto r = metrics::classification_report(s, t);
    for (double v : {r.CP, r.CR, r.CF1, r.OP, r.OR, r.OF1}) CHECK(v == 1.0);
  }
  SUBCASE("one image, half right") {
    const Tensor s = Tensor::from_rows({{0.9, 0.8, 0.2, 0.1}});
    const std::vector<losses::TriStateLabels> t{{1, -1, 1, -1}};
    const auto r = metrics::classification_report(s, t);
    CHECK(r.OP == 0.5);
    CHECK(r.OR == 0.5);
    CHECK(r.OF1 == 0.5);
    // Class 0: P=1, R=1. Class 1: P=0. Class 2: R=0. Class 3: nothing.
    CHECK(r.CP == 0.25);
    CHECK(r.CR == 0.25);
  }
  SUBCASE("threshold is strict") {
    const auto r = metrics::classification_report(Tensor::from_rows({{0.5}}), std::vector<losses::TriStateLabels>{{1}});
    CHECK(r.OR == 0.0);
    CHECK(r.OF1 == 0.0);
  }
  SUBCASE("top3 on three classes predicts everything") {
    const auto t = random_truth(6, 3, 3, false);
    const auto r = metrics::classification_report(test::random_tensor({6, 3}, 4, 0.0, 1.0), t, PredictionMode::kTop3);
    CHECK(r.OR == 1.0);
  }
  SUBCASE("top3 keeps the three best") {
    const Tensor s = Tensor::from_rows({{0.1, 0.9, 0.3, 0.3, 0.2}});
    const std::vector<losses::TriStateLabels> t{{-1, 1, -1, 1, 1}};
    const auto r = metrics::classification_report(s, t, PredictionMode::kTop3);
    // Predicted {1, 2, 3}: TP 2, FP 1, FN 1.
    CHECK(r.OP == doctest::Approx(2.0 / 3.0));
    CHECK(r.OR == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("unknown entries are ignored") {
    const Tensor s = Tensor::from_rows({{0.9, 0.9}});
    const auto r = metrics::classification_report(s, std::vector<losses::TriStateLabels>{{1, 0}});
    CHECK(r.OP == 1.0);
  }
}

TEST_CASE("classification_report invariants") {
  SplitMix64 rng(5);
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(8), c = 1 + rng.below(6);
    const auto s = test::random_tensor({n, c}, 10 + trial, 0.0, 1.0);
    const auto t = random_truth(n, c, 20 + trial, true);
    for (auto mode : {PredictionMode::kThreshold, PredictionMode::kTop3}) {
      const auto r = metrics::classification_report(s, t, mode);
      CHECK(r.OF1 >= std::min(r.OP, r.OR) - 1e-15);
      CHECK(r.OF1 <= std::max(r.OP, r.OR) + 1e-15);
      // Reverse the sample order.
      Tensor rs = Tensor::matrix(n, c);
      std::vector<losses::TriStateLabels> rt(t.rbegin(), t.rend());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) rs(i, j) = s(n - 1 - i, j);
      const auto r2 = metrics::classification_report(rs, rt, mode);
      CHECK(r2.CP == r.CP);
      CHECK(r2.CR == r.CR);
      CHECK(r2.OP == r.OP);
      CHECK(r2.OR == r.OR);
    }
  }
}

TEST_CASE("evaluate skips classes without positives") {
  const Tensor s = Tensor::from_rows({{0.9, 0.2, 0.4}, {0.1, 0.8, 0.3}, {0.6, 0.7, 0.5}});
  const std::vector<losses::TriStateLabels> t{{1, -1, -1}, {-1, 1, 0}, {0, 1, -1}};
  const auto rep = metrics::evaluate(s, t);
  REQUIRE(rep.per_class_ap.size() == 3);
  CHECK(rep.per_class_ap[0] == 1.0);
  CHECK(rep.per_class_ap[1] == 1.0);
  CHECK_FALSE(rep.per_class_ap[2].has_value());
  CHECK(rep.mAP == 1.0);
}
