#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "stochctl/actuator.hpp"
#include "stochctl/error.hpp"
#include "support.hpp"

using namespace stochctl;
using namespace stochctl::testing;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

PlacementProblem small_problem(const Vector& y0, double alpha = 0.4, int cells = 6) {
  const Model model = make_model(interval(), 3, 3, 0.5, 0.8);
  return PlacementProblem(model, CellGrid(model.basis().domain(), {cells, 1}), TimeWindow::full(0.5),
                          y0, alpha);
}

}  // namespace

TEST_CASE("projection onto the admissible set") {
  const CellGrid grid(interval(1.0), {4, 1});
  CHECK(project_onto_theta(vec({1, 1, 1, 1}), 0.5, grid).theta().isApprox(Vector::Constant(4, 0.5)));
  CHECK(project_onto_theta(vec({2, 1, 0, 0}), 0.5, grid).theta().isApprox(vec({1, 1, 0, 0})));
  const Vector t = project_onto_theta(vec({3, 1, 1, 1}), 0.5, grid).theta();
  CHECK(t(0) == doctest::Approx(1.0));
  for (int c = 1; c < 4; ++c) CHECK(t(c) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(project_onto_theta(vec({1, 1, 1, 1}), 0.0, grid), Error);
  CHECK_THROWS_AS(project_onto_theta(vec({1, 1, 1, 1}), 1.2, grid), Error);
}

TEST_CASE("projection is idempotent and beats random admissible points") {
  std::mt19937_64 rng(1);
  const CellGrid grid(square(1.0, 2.0), {4, 3});
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    Vector raw(grid.size());
    for (int c = 0; c < grid.size(); ++c) raw(c) = u(rng);
    const ActuatorDensity p = project_onto_theta(raw, 0.35, grid);
    CHECK(p.mass() == doctest::Approx(0.35 * 2.0));
    CHECK((project_onto_theta(p.theta(), 0.35, grid).theta() - p.theta()).cwiseAbs().maxCoeff() < 1e-12);
    // Equal volumes, so the projection is Euclidean in θ.
    const ActuatorDensity other = random_density(rng, grid, 0.35);
    CHECK((raw - p.theta()).norm() <= (raw - other.theta()).norm() + 1e-12);
  }
}

TEST_CASE("knapsack examples") {
  const CellGrid grid(interval(1.0), {4, 1});
  const KnapsackResult k = knapsack_max(vec({4, 3, 2, 1}), 0.5, grid);
  CHECK(k.theta.theta().isApprox(vec({1, 1, 0, 0})));
  CHECK(k.value == doctest::Approx(7.0));
  const KnapsackResult tie = knapsack_max(vec({1, 1, 1, 1}), 0.5, grid);
  CHECK(tie.theta.theta().isApprox(Vector::Constant(4, 0.5)));
  CHECK(tie.value == doctest::Approx(2.0));
  const KnapsackResult frac = knapsack_max(vec({1, 5, 3, 2}), 0.375, grid);
  CHECK(frac.theta.theta().isApprox(vec({0, 1, 0.5, 0})));
}

TEST_CASE("knapsack vertices have at most one fractional cell") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const CellGrid grid(interval(), {9, 1});
  for (int t = 0; t < 50; ++t) {
    Vector e(9);
    for (int c = 0; c < 9; ++c) e(c) = u(rng);
    const KnapsackResult k = knapsack_max(e, u(rng) * 0.9 + 0.05, grid);
    int fractional = 0;
    for (int c = 0; c < 9; ++c) fractional += k.theta.theta()(c) > 1e-12 && k.theta.theta()(c) < 1 - 1e-12;
    CHECK(fractional <= 1);
    // Any admissible density collects at most the knapsack value.
    const ActuatorDensity d = random_density(rng, grid, k.theta.alpha());
    CHECK(d.theta().dot(e) <= k.value + 1e-12);
  }
}

TEST_CASE("cost is convex and its gradient is minus the energies") {
  std::mt19937_64 rng(3);
  const PlacementProblem problem = small_problem(vec({1.0, -0.5, 0.3}));
  for (int t = 0; t < 10; ++t) {
    const Vector a = random_density(rng, problem.grid(), 0.4).theta();
    const Vector b = random_density(rng, problem.grid(), 0.4).theta();
    const double mid = problem.evaluate(0.5 * (a + b)).N;
    CHECK(mid <= 0.5 * problem.evaluate(a).N + 0.5 * problem.evaluate(b).N + 1e-12);

    const PlacementProblem::Evaluation ea = problem.evaluate(a);
    const double h = 1e-6;
    const double fd = (problem.evaluate(a + h * (b - a)).N - problem.evaluate(a - h * (b - a)).N) / (2 * h);
    CHECK(fd == doctest::Approx(-ea.energies.dot(b - a)).epsilon(1e-5));
  }
}

TEST_CASE("cost matches the HUM solver") {
  std::mt19937_64 rng(4);
  const Vector y0 = vec({0.7, 0.2, -1.0});
  const PlacementProblem problem = small_problem(y0);
  const ActuatorDensity d = random_density(rng, problem.grid(), 0.4);
  const GramOperator op(problem.model(), d.multiplier(problem.cell_grams()), problem.window());
  HumOptions h;
  h.dense = true;
  h.epsilon_schedule = {0.0};
  CHECK(problem.evaluate(d.theta()).N == doctest::Approx(solve_hum(y0, op, h).cost_N).epsilon(1e-10));
}

TEST_CASE("full budget saturates the domain") {
  const PlacementProblem problem = small_problem(vec({1.0, 0.0, 0.0}), 1.0);
  OptimizeOptions o;
  const OptimizeResult r = optimize_actuator(problem, o);
  CHECK(r.theta.theta().isApprox(Vector::Ones(6)));
  CHECK(r.N == doctest::Approx(problem.evaluate(Vector::Ones(6)).N));
}

TEST_CASE("mirror-symmetric data gives a mirror-invariant cost") {
  // e_1 and e_3 are even about the midpoint, so N(θ) = N(θ reflected).
  std::mt19937_64 rng(5);
  const PlacementProblem problem = small_problem(vec({1.0, 0.0, 0.4}), 0.4, 7);
  for (int t = 0; t < 5; ++t) {
    const Vector th = random_density(rng, problem.grid(), 0.4).theta();
    Vector mirrored(th.size());
    for (int c = 0; c < th.size(); ++c) mirrored(problem.grid().mirror(c, 0)) = th(c);
    CHECK(problem.evaluate(mirrored).N == doctest::Approx(problem.evaluate(th).N).epsilon(1e-11));
  }
}

TEST_CASE("both optimizers reach the same minimum and a saddle point") {
  const PlacementProblem problem = small_problem(vec({1.0, -0.5, 0.3}));
  OptimizeOptions pg;
  pg.max_iter = 2000;
  OptimizeOptions fw = pg;
  fw.method = PlacementMethod::FrankWolfe;
  const OptimizeResult a = optimize_actuator(problem, pg);
  const OptimizeResult b = optimize_actuator(problem, fw);
  // Frank–Wolfe converges sublinearly, so it only brackets the minimum.
  CHECK(b.N >= a.N * (1 - 1e-9));
  CHECK(b.N == doctest::Approx(a.N).epsilon(1e-3));
  CHECK(a.N <= problem.evaluate(ActuatorDensity::uniform(problem.grid(), 0.4).theta()).N);
  for (std::size_t i = 1; i < a.history.size(); ++i) CHECK(a.history[i] <= a.history[i - 1] + 1e-14);

  const NashReport nash = check_nash(problem, a.theta, 1e-4, 60, 11);
  CHECK(nash.passed);
  CHECK(nash.swap_decreases == nash.swap_probes);
  const GameValue g = minimax_gap(problem, a);
  CHECK(g.u_plus == doctest::Approx(0.5 * a.N));
  CHECK(g.gap >= -1e-9);
  CHECK(g.gap <= 1e-6 * g.u_plus);
  CHECK(parse_method("frank_wolfe") == PlacementMethod::FrankWolfe);
  CHECK_THROWS_AS(parse_method("simplex"), Error);
}

TEST_CASE("a poor density fails the saddle-point check") {
  const PlacementProblem problem = small_problem(vec({1.0, 0.0, 0.0}));
  // All mass at the boundary, where the first mode is weakest.
  const Vector edge = project_onto_theta(vec({3, 0, 0, 0, 0, 3}), 0.4, problem.grid()).theta();
  const NashReport nash = check_nash(problem, ActuatorDensity(problem.grid(), edge, 0.4), 1e-4, 60, 11);
  CHECK_FALSE(nash.passed);
  CHECK(nash.value_gap > 1e-4);
  CHECK_FALSE(nash.swaps_ok);
  CHECK(nash.swap_decreases < nash.swap_probes);
}

TEST_CASE("zero initial state costs nothing anywhere") {
  std::mt19937_64 rng(6);
  const PlacementProblem problem = small_problem(Vector::Zero(3));
  for (int t = 0; t < 3; ++t) {
    const PlacementProblem::Evaluation e = problem.evaluate(random_density(rng, problem.grid(), 0.4).theta());
    CHECK(e.N == 0.0);
    CHECK(e.energies.isZero());
  }
}

TEST_CASE("dense assembly refuses oversized problems") {
  const Model model = make_model(interval(), 8, 12, 1.0, 0.5);
  CHECK_THROWS_AS(PlacementProblem(model, CellGrid(model.basis().domain(), {20, 1}),
                                   TimeWindow::full(1.0), Vector::Ones(8), 0.3),
                  Error);
}
