#pragma once

// Small builders shared by the test binaries.

#include <cmath>
#include <random>
#include <vector>

#include "stochctl/actuator.hpp"
#include "stochctl/dynamics.hpp"
#include "stochctl/hum.hpp"

namespace stochctl::testing {

inline constexpr double kPi = 3.14159265358979323846;

inline BoxDomain interval(double length = kPi) {
  BoxDomain d;
  d.dims = 1;
  d.lengths = {length, 1.0};
  return d;
}

inline BoxDomain square(double lx = 1.0, double ly = 1.0) {
  BoxDomain d;
  d.dims = 2;
  d.lengths = {lx, ly};
  return d;
}

inline Model make_model(const BoxDomain& dom, int modes, int steps, double horizon,
                        std::vector<double> noise,
                        Propagator prop = Propagator::ImplicitEuler) {
  return Model(build_basis(dom, modes), FiltrationTree(steps, horizon),
               NoiseCoefficient(std::move(noise)), prop);
}

inline Model make_model(const BoxDomain& dom, int modes, int steps, double horizon, double a,
                        Propagator prop = Propagator::ImplicitEuler) {
  return make_model(dom, modes, steps, horizon, std::vector<double>(steps, a), prop);
}

inline Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  }
  return m;
}

inline AdaptedField random_control(std::mt19937_64& rng, int modes, int depth) {
  AdaptedField u(modes, depth);
  for (int k = 1; k <= depth; ++k) u.level(k) = gaussian(rng, modes, u.level(k).cols());
  return u;
}

/// A random point of Θ: projection of a random raw vector.
inline ActuatorDensity random_density(std::mt19937_64& rng, const CellGrid& grid,
                                      double alpha) {
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  Vector raw(grid.size());
  for (int c = 0; c < grid.size(); ++c) raw(c) = u(rng);
  return project_onto_theta(raw, alpha, grid);
}

/// Column i of the J × n matrix η ↦ z(0).
inline Matrix initial_map(const Model& model) {
  const int J = model.modes();
  const Eigen::Index n = model.terminal_dim();
  Matrix s(J, n);
  TerminalData unit = TerminalData::Zero(J, model.tree().leaves());
  for (Eigen::Index i = 0; i < n; ++i) {
    unit(i % J, i / J) = 1.0;
    s.col(i) = adjoint_solve(unit, model).initial();
    unit(i % J, i / J) = 0.0;
  }
  return s;
}

}  // namespace stochctl::testing
