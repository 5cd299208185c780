// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "mlsgm/autodiff.hpp"
#include "mlsgm/error.hpp"
#include "mlsgm/losses.hpp"
#include "test_util.hpp"

using namespace mlsgm;

namespace {

// Reference cross-entropy over {0,1} targets, written out per term.
double plain_bce(const std::vector<double>& p, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double q = std::clamp(p[c], 1e-12, 1.0 - 1e-12);
    total -= y[c] == 1 ? std::log(q) : std::log(1.0 - q);
  }
  return total;
}

std::vector<double> random_probs(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> p(n);
  for (auto& v : p) v = rng.uniform(0.01, 0.99);
  return p;
}

std::vector<int> random_binary(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<int> y(n);
  for (auto& v : y) v = rng.uniform() < 0.5 ? 1 : 0;
  return y;
}

std::vector<int> random_tristate(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(3)) - 1;
  y[0] = 1;
  return y;
}

double tape_value(ad::Var v) { return v.value()(0, 0); }

}  // namespace

TEST_CASE("max_pool examples") {
  CHECK(losses::max_pool(Tensor::from_rows({{0.1, 0.4}})) == std::vector<double>{0.1, 0.4});
  CHECK(losses::max_pool(Tensor::from_rows({{0.2}, {0.9}, {0.5}}))[0] == 0.9);
  SUBCASE("ties route the gradient to the first row") {
    ParamStore store;
    store.add("s", Tensor::from_rows({{0.7}, {0.7}}));
    ad::Tape tape(&store);
    auto p = losses::max_pool(tape.param("s"));
    CHECK(tape_value(p) == 0.7);
    tape.backward(ad::sum(p));
    CHECK(store.get("s").grad(0, 0) == 1.0);
    CHECK(store.get("s").grad(1, 0) == 0.0);
  }
}

TEST_CASE("weighted_bce examples") {
  const std::vector<double> priors{0.25, 0.5};
  SUBCASE("beta zero, y=1, p=0.5") {
    CHECK(losses::weighted_bce(std::vector<double>{0.5}, std::vector<int>{1}, std::vector<double>{0.3}, 0.0) ==
          doctest::Approx(0.693147).epsilon(1e-6));
  }
  SUBCASE("beta 0.4 with r=0.25") {
    const auto w = losses::imbalance_weights(std::vector<int>{1}, std::vector<double>{0.25}, 0.4);
    CHECK(w[0] == doctest::Approx(std::exp(0.3)).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(1.349859).epsilon(1e-6));
    CHECK(losses::weighted_bce(std::vector<double>{0.6}, std::vector<int>{1}, std::vector<double>{0.25}, 0.4) ==
          doctest::Approx(-std::exp(0.3) * std::log(0.6)).epsilon(1e-14));
  }
  SUBCASE("negative weight uses the prior itself") {
    const auto w = losses::imbalance_weights(std::vector<int>{0}, std::vector<double>{0.25}, 0.4);
    CHECK(w[0] == doctest::Approx(std::exp(0.1)).epsilon(1e-15));
  }
  SUBCASE("perfect prediction") {
    CHECK(losses::weighted_bce(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0}, priors, 0.4) < 1e-11);
  }
}

TEST_CASE("class priors") {
  const std::vector<losses::TriStateLabels> labels{{1, -1, -1}, {1, 1, -1}, {1, -1, -1}, {-1, -1, -1}};
  const auto r = losses::class_priors(labels, 3);
  CHECK(r[0] == 0.75);
  CHECK(r[1] == 0.25);
  CHECK(r[2] == 1.0 / 8.0);  // zero positives clamp to 1/(2N)
}

TEST_CASE("partial_bce examples") {
  const losses::PartialBceParams params;
  CHECK(losses::label_proportion_weight(1.0, params) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(losses::label_proportion_weight(0.5, params) == doctest::Approx(3.225).epsilon(1e-15));
  SUBCASE("only known entries contribute") {
    const std::vector<double> p{0.7, 0.1, 0.5, 0.9};
    const double g = losses::label_proportion_weight(0.25, params);
    CHECK(losses::partial_bce(p, std::vector<int>{1, 0, 0, 0}) == doctest::Approx(-g / 4 * std::log(0.7)).epsilon(1e-14));
  }
  SUBCASE("two known of four") {
    const std::vector<double> p{0.7, 0.2, 0.5, 0.9};
    const double want = -3.225 / 4 * (std::log(0.7) + std::log(0.8));
    CHECK(losses::partial_bce(p, std::vector<int>{1, -1, 0, 0}) == doctest::Approx(want).epsilon(1e-14));
  }
  SUBCASE("all unknown") {
    CHECK_THROWS_AS(losses::partial_bce(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 0}), DataError);
  }
}

TEST_CASE("asymmetric_focal examples") {
  const losses::FocalParams defaults;
  SUBCASE("margin clamps easy negatives") {
    CHECK(losses::asymmetric_focal(std::vector<double>{0.03}, std::vector<int>{0}, defaults) == 0.0);
  }
  SUBCASE("shifted negative term") {
    const double want = -std::pow(0.55, 4) * std::log(0.45);
    CHECK(losses::asymmetric_focal(std::vector<double>{0.6}, std::vector<int>{0}, defaults) ==
          doctest::Approx(want).epsilon(1e-14));
    CHECK(want == doctest::Approx(0.0730685).epsilon(1e-6));
  }
  SUBCASE("positive term with gamma_pos") {
    const losses::FocalParams fp{1.0, 4.0, 0.05};
    CHECK(losses::asymmetric_focal(std::vector<double>{0.8}, std::vector<int>{1}, fp) ==
          doctest::Approx(-0.2 * std::log(0.8)).epsilon(1e-14));
  }
}

TEST_CASE("loss identities") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t c = 1 + s % 7;
    const auto p = random_probs(c, s);
    const auto y = random_binary(c, 100 + s);
    const auto priors = random_probs(c, 200 + s);
    const double ref = plain_bce(p, y);
    CHECK(std::abs(losses::weighted_bce(p, y, priors, 0.0) - ref) <= 1e-12);
    CHECK(std::abs(losses::bce(p, y) - ref) <= 1e-12);
    CHECK(std::abs(losses::asymmetric_focal(p, y, {0.0, 0.0, 0.0}) - ref) <= 1e-12);
    std::vector<int> tri(y);
    for (auto& v : tri) v = v == 1 ? 1 : -1;
    CHECK(std::abs(losses::partial_bce(p, tri) - ref / static_cast<double>(c)) <= 1e-12);
  }
}

TEST_CASE("partial_bce ignores predictions at unknown positions") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t c = 2 + s % 6;
    auto p = random_probs(c, 300 + s);
    const auto y = random_tristate(c, 400 + s);
    const double before = losses::partial_bce(p, y);
    SplitMix64 rng(500 + s);
    for (std::size_t j = 0; j < c; ++j)
      if (y[j] == 0) p[j] = rng.uniform();
    CHECK(losses::partial_bce(p, y) == before);
  }
}

TEST_CASE("losses are non-negative and vanish at perfect predictions") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t c = 1 + s % 5;
    const auto p = random_probs(c, 600 + s);
    const auto y = random_binary(c, 700 + s);
    const auto priors = random_probs(c, 800 + s);
    CHECK(losses::weighted_bce(p, y, priors, 0.4) > 0.0);
    CHECK(losses::asymmetric_focal(p, y) >= 0.0);
    std::vector<double> perfect(c);
    std::vector<int> tri(c);
    for (std::size_t j = 0; j < c; ++j) {
      perfect[j] = y[j];
      tri[j] = y[j] == 1 ? 1 : -1;
    }
    CHECK(losses::weighted_bce(perfect, y, priors, 0.4) < 1e-10);
    CHECK(losses::partial_bce(perfect, tri) < 1e-10);
    CHECK(losses::asymmetric_focal(perfect, y) < 1e-10);
  }
}

TEST_CASE("closed-form gradients match finite differences") {
  const double h = 1e-6;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t c = 2 + s % 4;
    const auto p = random_probs(c, 900 + s);
    const auto y = random_binary(c, 1000 + s);
    const auto tri = random_tristate(c, 1100 + s);
    const auto priors = random_probs(c, 1200 + s);
    const auto gw = losses::weighted_bce_grad(p, y, priors, 0.4);
    const auto gp = losses::partial_bce_grad(p, tri);
    const auto gf = losses::asymmetric_focal_grad(p, y);
    for (std::size_t j = 0; j < c; ++j) {
      if (std::abs(p[j] - 0.05) < 1e-3) continue;  // focal kink
      auto up = p, dn = p;
      up[j] += h;
      dn[j] -= h;
      CHECK(gw[j] == doctest::Approx((losses::weighted_bce(up, y, priors, 0.4) - losses::weighted_bce(dn, y, priors, 0.4)) /
                                     (2 * h))
                         .epsilon(1e-5));
      CHECK(gp[j] == doctest::Approx((losses::partial_bce(up, tri) - losses::partial_bce(dn, tri)) / (2 * h)).epsilon(1e-5));
      CHECK(gf[j] ==
            doctest::Approx((losses::asymmetric_focal(up, y) - losses::asymmetric_focal(dn, y)) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("tape losses agree with the value route") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t c = 2 + s % 4;
    const auto p = random_probs(c, 1300 + s);
    const auto y = random_binary(c, 1400 + s);
    const auto tri = random_tristate(c, 1500 + s);
    const auto priors = random_probs(c, 1600 + s);
    ParamStore store;
    store.add("p", Tensor::row_vector(p));
    {
      ad::Tape tape(&store);
      auto loss = losses::weighted_bce(tape.param("p"), y, priors, 0.4);
      CHECK(tape_value(loss) == doctest::Approx(losses::weighted_bce(p, y, priors, 0.4)).epsilon(1e-14));
      tape.backward(loss);
      const auto g = losses::weighted_bce_grad(p, y, priors, 0.4);
      for (std::size_t j = 0; j < c; ++j) CHECK(store.get("p").grad(0, j) == doctest::Approx(g[j]).epsilon(1e-13));
    }
    store.zero_grad();
    {
      ad::Tape tape(&store);
      auto loss = losses::partial_bce(tape.param("p"), tri);
      CHECK(tape_value(loss) == doctest::Approx(losses::partial_bce(p, tri)).epsilon(1e-14));
      tape.backward(loss);
      const auto g = losses::partial_bce_grad(p, tri);
      for (std::size_t j = 0; j < c; ++j) CHECK(store.get("p").grad(0, j) == doctest::Approx(g[j]).epsilon(1e-13));
    }
    store.zero_grad();
    {
      ad::Tape tape(&store);
      auto loss = losses::asymmetric_focal(tape.param("p"), y);
      CHECK(tape_value(loss) == doctest::Approx(losses::asymmetric_focal(p, y)).epsilon(1e-14));
      tape.backward(loss);
      const auto g = losses::asymmetric_focal_grad(p, y);
      for (std::size_t j = 0; j < c; ++j) CHECK(store.get("p").grad(0, j) == doctest::Approx(g[j]).epsilon(1e-13));
    }
  }
}

TEST_CASE("label validation") {
  CHECK_NOTHROW(losses::validate_labels(std::vector<int>{1, -1, 0}, 3));
  CHECK_THROWS_AS(losses::validate_labels(std::vector<int>{1, 2, 0}, 3), DataError);
  CHECK_THROWS_AS(losses::validate_labels(std::vector<int>{1, -1}, 3), DataError);
  CHECK_THROWS_AS(losses::validate_labels(std::vector<int>{1, 0}, 2, false), DataError);
  CHECK(losses::to_binary(std::vector<int>{1, -1, 0}) == std::vector<int>{1, 0, 0});
}
