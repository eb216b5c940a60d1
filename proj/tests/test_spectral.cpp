#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stochctl/error.hpp"
#include "stochctl/spectral.hpp"
#include "support.hpp"

using namespace stochctl;
using stochctl::testing::interval;
using stochctl::testing::kPi;
using stochctl::testing::square;

namespace {

// Composite Simpson rule for ∫_a^b f.
template <class F>
double simpson(F f, double a, double b, int n = 2000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

Box segment(double lo, double hi) {
  Box b;
  b.lo = {lo, 0.0};
  b.hi = {hi, 1.0};
  return b;
}

}  // namespace

TEST_CASE("interval eigenvalues are j squared") {
  const SpectralBasis basis = build_basis(interval(), 5);
  for (int j = 0; j < 5; ++j) CHECK(basis.eigenvalue(j) == doctest::Approx((j + 1) * (j + 1)));
  CHECK(basis.eigenfunction(0, {kPi / 2, 0.0}) == doctest::Approx(std::sqrt(2.0 / kPi)));
}

TEST_CASE("square modes are ordered by eigenvalue then multi-index") {
  const SpectralBasis basis = build_basis(square(), 4);
  CHECK(basis.modes()[0] == MultiIndex{1, 1});
  CHECK(basis.modes()[1] == MultiIndex{1, 2});
  CHECK(basis.modes()[2] == MultiIndex{2, 1});
  CHECK(basis.modes()[3] == MultiIndex{2, 2});
  CHECK(basis.eigenvalue(1) == doctest::Approx(5 * kPi * kPi));
  CHECK(basis.eigenvalue(1) == basis.eigenvalue(2));
}

TEST_CASE("box Gram matches quadrature") {
  const SpectralBasis basis = build_basis(interval(), 6);
  const Box box = segment(0.3, 1.9);
  const Matrix g = box_gram(basis, box);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      const double q = simpson(
          [&](double x) { return basis.eigenfunction(i, {x, 0}) * basis.eigenfunction(j, {x, 0}); },
          0.3, 1.9);
      CHECK(g(i, j) == doctest::Approx(q).epsilon(1e-10));
    }
  }
}

TEST_CASE("half-interval Gram has diagonal one half") {
  const SpectralBasis basis = build_basis(interval(), 6);
  const Matrix g = box_gram(basis, segment(0.0, kPi / 2));
  for (int j = 0; j < 6; ++j) CHECK(g(j, j) == doctest::Approx(0.5));
  // (1/π)[sin((i−j)π/2)/(i−j) − sin((i+j)π/2)/(i+j)] for modes i = 1, j = 2.
  CHECK(g(0, 1) == doctest::Approx((1.0 / kPi) * (1.0 - std::sin(1.5 * kPi) / 3.0)));
}

TEST_CASE("2D box Gram matches a tensor quadrature") {
  const SpectralBasis basis = build_basis(square(), 5);
  Box b;
  b.lo = {0.1, 0.2};
  b.hi = {0.6, 0.9};
  const Matrix g = box_gram(basis, b);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double q = simpson(
          [&](double y) {
            return simpson(
                [&](double x) {
                  return basis.eigenfunction(i, {x, y}) * basis.eigenfunction(j, {x, y});
                },
                0.1, 0.6, 400);
          },
          0.2, 0.9, 400);
      CHECK(g(i, j) == doctest::Approx(q).epsilon(1e-9));
    }
  }
}

TEST_CASE("full-domain Gram is the identity") {
  for (const BoxDomain& d : {interval(2.0), square(1.0, 2.0)}) {
    const SpectralBasis basis = build_basis(d, 7);
    const Matrix g = gram(basis, Region::full(d));
    CHECK((g - Matrix::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-13);
    CHECK(spectral_inequality_constant(basis, Region::full(d), 1e9) == doctest::Approx(1.0));
  }
}

TEST_CASE("Gram is additive over disjoint boxes") {
  const BoxDomain d = interval();
  const SpectralBasis basis = build_basis(d, 5);
  const Region two(d, {segment(0.0, 1.0), segment(1.0, 2.5)});
  const Matrix sum = box_gram(basis, segment(0.0, 1.0)) + box_gram(basis, segment(1.0, 2.5));
  CHECK((gram(basis, two) - sum).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(two.measure() == doctest::Approx(2.5));
}

TEST_CASE("regions reject overlap, escape and empty boxes") {
  const BoxDomain d = interval();
  CHECK_THROWS_AS(Region(d, {segment(0.0, 1.0), segment(0.5, 1.5)}), Error);
  CHECK_THROWS_AS(Region(d, {segment(3.0, 3.5)}), Error);
  CHECK_THROWS_AS(Region(d, {segment(1.0, 1.0)}), Error);
  try {
    Region(d, {segment(-0.5, 1.0)});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidRegion);
  }
}

TEST_CASE("spectral projection splits exactly") {
  const SpectralBasis basis = build_basis(interval(), 6);
  Vector c(6);
  c << 0.3, -1.1, 2.0, 0.7, -0.2, 5.0;
  const SpectralSplit s = spectral_project(c, basis, 9.0);
  CHECK(s.low + s.high == c);
  CHECK(s.high.head(3).isZero());
  CHECK(s.low.tail(3).isZero());
  CHECK(modes_below(basis, 9.0) == 3);
  CHECK(modes_below(basis, 8.99) == 2);
}

TEST_CASE("spectral constant grows as the region shrinks") {
  const BoxDomain d = interval();
  const SpectralBasis basis = build_basis(d, 6);
  double previous = 0.0;
  for (double hi : {kPi, 2.5, 2.0, 1.5}) {
    const double c = spectral_inequality_constant(basis, Region(d, {segment(0.0, hi)}), 40.0);
    CHECK(c >= previous * (1 - 1e-12));
    previous = c;
  }
  const SpectralGrowth growth = spectral_growth(basis, Region(d, {segment(0.0, 1.0)}));
  CHECK(growth.cutoffs.size() == 6);
  CHECK(growth.ratios.front() >= 1.0);
  CHECK_THROWS_AS(spectral_inequality_constant(basis, Region(d, {segment(0.0, 0.2)}), 40.0), Error);
}

TEST_CASE("invalid domains are rejected") {
  BoxDomain d;
  d.dims = 3;
  CHECK_THROWS_AS(d.validate(), Error);
  d.dims = 1;
  d.lengths = {-1.0, 1.0};
  CHECK_THROWS_AS(d.validate(), Error);
}
