#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "stochctl/error.hpp"
#include "stochctl/stochastic_grid.hpp"
#include "support.hpp"

using namespace stochctl;

TEST_CASE("Brownian path sums the branch increments") {
  const FiltrationTree tree(4, 2.0);
  const double s = std::sqrt(0.5);
  CHECK(tree.sqrt_dt() == doctest::Approx(s));
  CHECK(tree.brownian(0, 0) == 0.0);
  CHECK(tree.brownian(2, 0) == doctest::Approx(2 * s));
  CHECK(tree.brownian(2, 3) == doctest::Approx(-2 * s));
  CHECK(tree.brownian(3, 5) == doctest::Approx(-s));  // 101: down, up, down
  CHECK(tree.probability(3) == 0.125);
}

TEST_CASE("tree depth is capped") {
  CHECK_NOTHROW(FiltrationTree(20, 1.0));
  CHECK_THROWS_AS(FiltrationTree(21, 1.0), Error);
  CHECK_THROWS_AS(FiltrationTree(0, 1.0), Error);
  CHECK_THROWS_AS(FiltrationTree(4, 0.0), Error);
}

TEST_CASE("W is a martingale and W² − t its compensator") {
  const FiltrationTree tree(8, 1.5);
  TerminalData w(2, tree.leaves());
  for (std::int64_t p = 0; p < tree.leaves(); ++p) {
    const double b = tree.brownian(8, p);
    w(0, p) = b;
    w(1, p) = b * b - tree.horizon();
  }
  for (int k = 0; k <= 8; ++k) {
    const AdaptedField ce = conditional_expectation(w, k);
    for (std::int64_t p = 0; p < tree.nodes_at(k); ++p) {
      const double b = tree.brownian(k, p);
      CHECK(ce.level(k)(0, p) == doctest::Approx(b));
      CHECK(ce.level(k)(1, p) == doctest::Approx(b * b - tree.time(k)));
    }
  }
}

TEST_CASE("conditional expectation is an orthogonal projection") {
  std::mt19937_64 rng(3);
  const int K = 6;
  const TerminalData a = stochctl::testing::gaussian(rng, 3, 1 << K);
  const TerminalData b = stochctl::testing::gaussian(rng, 3, 1 << K);
  for (int k = 0; k <= K; ++k) {
    const Matrix pa = conditional_expectation(a, k).level(k);
    const Matrix pb = conditional_expectation(b, k).level(k);
    const AdaptedField lifted = conditional_expectation(a, k);
    // E(Πa, b) = E(Πa, Πb) at level k.
    double lhs = 0.0;
    const std::int64_t block = std::int64_t{1} << (K - k);
    for (std::int64_t leaf = 0; leaf < b.cols(); ++leaf) {
      lhs += pa.col(leaf / block).dot(b.col(leaf));
    }
    lhs /= static_cast<double>(b.cols());
    CHECK(lhs == doctest::Approx(expected_dot(pa, pb)));
    CHECK(expected_sq(pa) <= expected_sq(a) + 1e-12);
    CHECK(lifted.level(k).cols() == (1 << k));
  }
}

TEST_CASE("expected norms weight each node by its probability") {
  Matrix lv(2, 4);
  lv << 1, 2, 3, 4, 0, 0, 0, 1;
  CHECK(expected_sq(lv) == doctest::Approx((1 + 4 + 9 + 16 + 1) / 4.0));
  Matrix g(2, 2);
  g << 2, 0, 0, 3;
  CHECK(expected_norm_sq(lv, g) == doctest::Approx((2 * 30 + 3) / 4.0));
}

TEST_CASE("adapted field arithmetic and second moment") {
  AdaptedField f(1, 2);
  f.level(0)(0, 0) = 1;
  f.level(1) << 2, 2;
  f.level(2) << 1, 1, 1, 1;
  CHECK(f.second_moment() == doctest::Approx(1 + 4 + 1));
  const AdaptedField g = 2.0 * f + f;
  CHECK(g.level(2)(0, 3) == 3.0);
}

TEST_CASE("time window mask uses left endpoints") {
  const FiltrationTree tree(4, 1.0);
  const TimeWindow w({{0.2, 0.6}}, 1.0);
  CHECK(w.measure() == doctest::Approx(0.4));
  const std::vector<double> m = w.mask(tree);
  CHECK(m == std::vector<double>{0, 1, 1, 0});
  CHECK(TimeWindow::full(1.0).mask(tree) == std::vector<double>(4, 1.0));
  CHECK_THROWS_AS(TimeWindow({{0.2, 0.6}, {0.5, 0.8}}, 1.0), Error);
  CHECK_THROWS_AS(TimeWindow({{0.5, 1.5}}, 1.0), Error);
  CHECK_THROWS_AS(TimeWindow({}, 1.0), Error);
}

TEST_CASE("terminal sampling is reproducible") {
  const FiltrationTree tree(5, 1.0);
  TerminalSpec spec;
  spec.kind = TerminalSpec::Kind::Gaussian;
  const TerminalData a = sample_terminal(11, spec, tree, 3);
  CHECK(a == sample_terminal(11, spec, tree, 3));
  CHECK(a != sample_terminal(12, spec, tree, 3));

  spec.kind = TerminalSpec::Kind::BrownianMode;
  spec.mode = 1;
  const TerminalData b = sample_terminal(0, spec, tree, 3);
  for (std::int64_t p = 0; p < tree.leaves(); ++p) {
    CHECK(b(1, p) == doctest::Approx(tree.brownian(5, p)));
    CHECK(b(0, p) == 0.0);
  }
  CHECK(TerminalSpec::parse("brownian_mode").kind == TerminalSpec::Kind::BrownianMode);
  CHECK_THROWS_AS(TerminalSpec::parse("levy"), Error);
}

TEST_CASE("noise coefficient intensity") {
  const NoiseCoefficient a({0.5, -2.0, 1.0});
  CHECK(a.tau() == doctest::Approx(4.0));
  CHECK(NoiseCoefficient::constant(3, 0.0).tau() == 0.0);
}
