#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "stochctl/error.hpp"
#include "stochctl/hum.hpp"
#include "support.hpp"

using namespace stochctl;
using namespace stochctl::testing;

namespace {

HumOptions dense_exact() {
  HumOptions h;
  h.dense = true;
  h.epsilon_schedule = {0.0};
  return h;
}

}  // namespace

TEST_CASE("scalar noiseless cost has a closed form") {
  // With a = 0 the optimal terminal data is deterministic, so
  // N = (p^K y0)² / Σ_{k=1..K} dt w p^{2(K−k)}.
  for (int K : {1, 3, 6}) {
    const double T = 1.0, w = 0.6, y0 = 1.7;
    const Model model = make_model(interval(), 1, K, T, 0.0);
    const GramOperator op(model, Matrix::Constant(1, 1, w), TimeWindow::full(T));
    const double dt = T / K, p = 1.0 / (1.0 + dt);
    double g = 0.0;
    for (int k = 1; k <= K; ++k) g += dt * w * std::pow(p, 2 * (K - k));
    const double expected = std::pow(std::pow(p, K) * y0, 2) / g;
    const HumSolution s = solve_hum(Vector::Constant(1, y0), op, dense_exact());
    CHECK(s.cost_N == doctest::Approx(expected).epsilon(1e-12));
    CHECK(s.value_V == doctest::Approx(-0.5 * expected).epsilon(1e-12));
    CHECK(verify_null_control(s, Vector::Constant(1, y0), op) < 1e-12);
  }
}

TEST_CASE("Gram operator is self-adjoint and positive") {
  std::mt19937_64 rng(2);
  const Model model = make_model(interval(), 3, 4, 0.5, 0.9);
  const GramOperator op(model, Matrix::Identity(3, 3), TimeWindow({{0.1, 0.4}}, 0.5));
  CHECK(op.certification_error() < 1e-12);
  const Matrix g = op.dense();
  CHECK((g - g.transpose()).cwiseAbs().maxCoeff() < 1e-13 * g.cwiseAbs().maxCoeff());
  const TerminalData eta = gaussian(rng, 3, 16);
  CHECK(op.quadratic(eta) == doctest::Approx(inner(op.apply(eta), eta)));
  CHECK(op.quadratic(eta) > 0.0);
}

TEST_CASE("corrupted adjoint fails certification") {
  Model model = make_model(interval(), 3, 4, 0.5, 0.9);
  model.set_corrupt_adjoint(true);
  try {
    GramOperator op(model, Matrix::Identity(3, 3), TimeWindow::full(0.5));
    FAIL("certification accepted a corrupted adjoint");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InternalConsistency);
  }
}

TEST_CASE("CG and dense solves agree and drive the state to zero") {
  std::mt19937_64 rng(4);
  const Model model = make_model(interval(), 4, 5, 0.5, 0.6);
  const CellGrid grid(model.basis().domain(), {6, 1});
  const Matrix b = random_density(rng, grid, 0.5).multiplier(cell_grams(model.basis(), grid));
  const GramOperator op(model, b, TimeWindow::full(0.5));
  const Vector y0 = gaussian(rng, 4, 1).col(0);
  HumOptions cg;
  cg.epsilon_schedule = {1e-6, 1e-9, 1e-12};
  cg.tol = 1e-12;
  const HumSolution a = solve_hum(y0, op, cg);
  const HumSolution d = solve_hum(y0, op, dense_exact());
  CHECK(a.cost_N == doctest::Approx(d.cost_N).epsilon(1e-6));
  CHECK(d.terminal_residual < 1e-9 * y0.norm());
  CHECK(verify_null_control(d, y0, op) < 1e-9 * y0.norm());
  CHECK(d.el_residual < 1e-10);
  CHECK(!a.residual_history.empty());
}

TEST_CASE("Euler-Lagrange pairing equals minus epsilon times the data") {
  std::mt19937_64 rng(6);
  const Model model = make_model(interval(), 3, 4, 1.0, 0.4);
  const GramOperator op(model, Matrix::Identity(3, 3), TimeWindow::full(1.0));
  const Vector y0 = gaussian(rng, 3, 1).col(0);
  HumOptions h;
  h.dense = true;
  h.epsilon_schedule = {1e-3};
  const HumSolution s = solve_hum(y0, op, h);
  const TerminalData r = op.load(y0);
  for (int t = 0; t < 5; ++t) {
    const TerminalData test = gaussian(rng, 3, 16);
    CHECK(el_pairing(s, op, r, test) ==
          doctest::Approx(-1e-3 * inner(s.eta_star, test)).epsilon(1e-8).scale(norm(test)));
  }
}

TEST_CASE("zero initial state needs no control") {
  const Model model = make_model(interval(), 3, 4, 1.0, 0.4);
  const GramOperator op(model, Matrix::Identity(3, 3), TimeWindow::full(1.0));
  const HumSolution s = solve_hum(Vector::Zero(3), op, HumOptions{});
  CHECK(s.cost_N == 0.0);
  CHECK(s.eta_star.isZero());
  CHECK(s.control_linf == 0.0);
}

TEST_CASE("HUM control is minimal among admissible controls") {
  std::mt19937_64 rng(9);
  const Model model = make_model(interval(), 3, 3, 0.5, 1.1);
  const GramOperator op(model, Matrix::Identity(3, 3), TimeWindow({{0.1, 0.5}}, 0.5));
  const HumSolution s = solve_hum(gaussian(rng, 3, 1).col(0), op, dense_exact());
  const MinimalNormCheck m = minimal_norm_over_admissible(s, op, 20, 3);
  CHECK(m.ok);
  CHECK(m.trials > 10);
  CHECK(m.min_cost_increase >= 0.0);
  CHECK(m.max_orthogonality < 1e-8);
}

TEST_CASE("invalid solver settings") {
  const Model model = make_model(interval(), 2, 3, 1.0, 0.0);
  const GramOperator op(model, Matrix::Identity(2, 2), TimeWindow::full(1.0));
  HumOptions h;
  h.epsilon_schedule = {0.0};
  try {
    solve_hum(Vector::Ones(2), op, h);
    FAIL("epsilon = 0 accepted by CG");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
  }
  h.epsilon_schedule = {1e-8};
  h.max_iter = 1;
  h.tol = 1e-14;
  std::vector<double> history;
  h.history = &history;
  try {
    solve_hum(Vector::Ones(2), op, h);
    FAIL("iteration limit not reported");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IterationLimit);
    CHECK(e.value() > 0.0);
  }
  CHECK(!history.empty());
}

TEST_CASE("a window that misses every step is degenerate") {
  const Model model = make_model(interval(), 2, 4, 1.0, 0.0);
  const GramOperator op(model, Matrix::Identity(2, 2), TimeWindow({{0.01, 0.02}}, 1.0));
  try {
    solve_hum(Vector::Ones(2), op, dense_exact());
    FAIL("singular Gram accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateObservation);
  }
}
