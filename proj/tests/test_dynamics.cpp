#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "stochctl/dynamics.hpp"
#include "stochctl/error.hpp"
#include "support.hpp"

using namespace stochctl;
using namespace stochctl::testing;

TEST_CASE("mean and second moment of the free forward state") {
  const double a = 0.7, T = 1.0;
  const int K = 8, J = 3;
  const Model model = make_model(interval(), J, K, T, a);
  Vector y0(J);
  y0 << 1.0, -0.5, 2.0;
  const Matrix yK = propagate(model, y0, nullptr).terminal();
  const double dt = T / K;
  for (int j = 0; j < J; ++j) {
    const double p = 1.0 / (1.0 + dt * (j + 1) * (j + 1));
    const double mean = yK.row(j).mean();
    const double second = yK.row(j).squaredNorm() / static_cast<double>(yK.cols());
    CHECK(mean == doctest::Approx(std::pow(p, K) * y0(j)).epsilon(1e-12));
    CHECK(second ==
          doctest::Approx(std::pow(p, 2 * K) * std::pow(1 + a * a * dt, K) * y0(j) * y0(j))
              .epsilon(1e-12));
  }
}

TEST_CASE("exponential propagator factors") {
  const Model model = make_model(interval(), 4, 5, 0.5, 0.0, Propagator::Exponential);
  for (int j = 0; j < 4; ++j) {
    CHECK(model.step_factor()(j) == doctest::Approx(std::exp(-0.1 * (j + 1) * (j + 1))));
  }
  CHECK(parse_propagator(to_string(Propagator::Exponential)) == Propagator::Exponential);
  CHECK_THROWS_AS(parse_propagator("crank_nicolson"), Error);
}

TEST_CASE("deterministic adjoint decays by the propagator") {
  const int K = 6;
  const Model model = make_model(interval(), 2, K, 1.0, 0.0);
  TerminalData eta(2, 1 << K);
  eta.row(0).setConstant(3.0);
  eta.row(1).setConstant(-1.0);
  const Vector z0 = adjoint_solve(eta, model).initial();
  CHECK(z0(0) == doctest::Approx(3.0 * std::pow(1.0 / (1 + 1.0 / K), K)));
  CHECK(z0(1) == doctest::Approx(-1.0 * std::pow(1.0 / (1 + 4.0 / K), K)));
}

TEST_CASE("adjoint of W_T picks up the noise drift") {
  // z_{K−j} = P^j W + j a dt P^j, so z(0) = a T P^K.
  const double a = 1.3, T = 0.8;
  const int K = 7;
  const Model model = make_model(interval(), 1, K, T, a);
  TerminalSpec spec;
  spec.kind = TerminalSpec::Kind::BrownianMode;
  const AdjointTrajectory traj = adjoint_solve(sample_terminal(0, spec, model.tree(), 1), model);
  const double p = 1.0 / (1.0 + T / K);
  CHECK(traj.initial()(0) == doctest::Approx(a * T * std::pow(p, K)).epsilon(1e-12));
  for (int k = 0; k < K; ++k) {
    CHECK((traj.Zmart.level(k).array() - std::pow(p, K - k - 1)).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("duality identity holds to round-off for random data") {
  std::mt19937_64 rng(21);
  for (Propagator prop : {Propagator::ImplicitEuler, Propagator::Exponential}) {
    for (int trial = 0; trial < 5; ++trial) {
      std::uniform_real_distribution<double> u(-2.0, 2.0);
      std::vector<double> a(6);
      for (double& v : a) v = u(rng);
      const Model model = make_model(square(), 5, 6, 0.3, a, prop);
      const CellGrid grid(model.basis().domain(), {3, 3});
      const Matrix b = random_density(rng, grid, 0.4).multiplier(cell_grams(model.basis(), grid));
      const DualityGap d =
          duality_identity(gaussian(rng, 5, 1).col(0), random_control(rng, 5, 6), b,
                           gaussian(rng, 5, 64), model);
      CHECK(d.relative < 1e-13);
    }
  }
}

TEST_CASE("corrupted adjoint breaks duality") {
  std::mt19937_64 rng(5);
  Model model = make_model(interval(), 4, 5, 1.0, 0.8);
  model.set_corrupt_adjoint(true);
  const DualityGap d = duality_identity(gaussian(rng, 4, 1).col(0), random_control(rng, 4, 5),
                                        Matrix::Identity(4, 4), gaussian(rng, 4, 32), model);
  CHECK(d.relative > 1e-3);
}

TEST_CASE("lattice sweep agrees with the tree for W_T-measurable data") {
  const int K = 10, J = 3;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<double> a(K);
  for (double& v : a) v = u(rng);
  const Model model = make_model(interval(), J, K, 0.7, a);
  const Matrix by_downs = gaussian(rng, J, K + 1);
  TerminalData eta(J, model.tree().leaves());
  for (std::int64_t p = 0; p < eta.cols(); ++p) {
    eta.col(p) = by_downs.col(__builtin_popcountll(static_cast<unsigned long long>(p)));
  }
  const AdjointTrajectory tree = adjoint_solve(eta, model);
  const std::vector<Matrix> lattice =
      adjoint_solve_lattice(by_downs, model.basis(), 0.7, NoiseCoefficient(a), model.propagator());
  REQUIRE(lattice.size() == static_cast<std::size_t>(K + 1));
  double worst = 0.0;
  for (int k = 0; k <= K; ++k) {
    for (std::int64_t p = 0; p < tree.z.level(k).cols(); ++p) {
      const int d = __builtin_popcountll(static_cast<unsigned long long>(p));
      worst = std::max(worst, (tree.z.level(k).col(p) - lattice[k].col(d)).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst < 1e-13);
}

TEST_CASE("forward control enters through dt times the multiplier") {
  const Model model = make_model(interval(), 2, 1, 0.5, 0.0);
  AdaptedField u(2, 1);
  u.level(1) << 1.0, 1.0, 2.0, 2.0;
  Matrix b(2, 2);
  b << 1.0, 0.5, 0.5, 2.0;
  const Matrix yK = forward_solve(Vector::Zero(2), u, b, model).terminal();
  CHECK((yK - 0.5 * b * u.level(1)).cwiseAbs().maxCoeff() < 1e-15);
}
