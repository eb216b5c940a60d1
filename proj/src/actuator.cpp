#include "stochctl/actuator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <utility>

#include <Eigen/Cholesky>

#include "stochctl/error.hpp"

namespace stochctl {

ActuatorDensity project_onto_theta(const Vector& raw, double alpha, const CellGrid& grid) {
  validate_budget(alpha);
  require(raw.size() == grid.size(), ErrorKind::InvalidDensity,
          "raw density has the wrong number of cells");
  const Vector& vol = grid.volumes();
  const double mass = alpha * grid.domain().volume();
  auto clipped = [&](double mu) {
    return (raw - mu * vol).cwiseMax(0.0).cwiseMin(1.0).eval();
  };
  // Mass of clip(raw − μ vol) is non-increasing in μ.
  double lo = ((raw.array() - 1.0) / vol.array()).minCoeff();
  double hi = (raw.array() / vol.array()).maxCoeff();
  Vector theta;
  if (clipped(lo).dot(vol) <= mass) {
    theta = clipped(lo);
  } else {
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      (clipped(mid).dot(vol) > mass ? lo : hi) = mid;
    }
    // Blend the two brackets so the mass is met to round-off even when the
    // bisection stops at a kink.
    const Vector a = clipped(lo);
    const Vector b = clipped(hi);
    const double ma = a.dot(vol);
    const double mb = b.dot(vol);
    const double w = ma > mb ? (ma - mass) / (ma - mb) : 0.0;
    theta = ((1.0 - w) * a + w * b).cwiseMax(0.0).cwiseMin(1.0);
  }
  return ActuatorDensity(grid, theta, alpha);
}

KnapsackResult knapsack_max(const Vector& energies, double alpha, const CellGrid& grid) {
  validate_budget(alpha);
  require(energies.size() == grid.size(), ErrorKind::InvalidConfig,
          "energy vector has the wrong number of cells");
  const Vector& vol = grid.volumes();
  const int C = grid.size();
  const Vector density = energies.cwiseQuotient(vol);
  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return density(a) > density(b); });
  const double tie = 1e-12 * std::max(std::abs(density.maxCoeff()), std::abs(density.minCoeff()));

  Vector theta = Vector::Zero(C);
  double remaining = alpha * grid.domain().volume();
  double level = density(order.front());
  for (int i = 0; i < C && remaining > 0.0;) {
    int j = i;
    double group_vol = 0.0;
    while (j < C && density(order[i]) - density(order[j]) <= tie) group_vol += vol(order[j++]);
    level = density(order[i]);
    const double fill = std::min(1.0, remaining / group_vol);
    for (int g = i; g < j; ++g) theta(order[g]) = fill;
    remaining -= fill * group_vol;
    if (fill < 1.0) break;
    i = j;
  }
  KnapsackResult out{ActuatorDensity(grid, theta, alpha), theta.dot(energies), level};
  return out;
}

PlacementProblem::PlacementProblem(Model model, CellGrid grid, const TimeWindow& window,
                                   Vector y0, double alpha)
    : model_(std::move(model)),
      grid_(std::move(grid)),
      window_(window),
      y0_(std::move(y0)),
      alpha_(alpha) {
  validate_budget(alpha_);
  require(y0_.size() == model_.modes(), ErrorKind::InvalidConfig,
          "initial state has the wrong length");
  const Eigen::Index n = dim();
  const int C = grid_.size();
  require(static_cast<double>(C) * static_cast<double>(n) * static_cast<double>(n) <=
              static_cast<double>(1 << 26),
          ErrorKind::InvalidConfig, "placement problem too large for the dense inner solve");
  grams_ = stochctl::cell_grams(model_.basis(), grid_);
  leaf_weight_ = model_.tree().probability(model_.steps());

  const int J = model_.modes();
  const int K = model_.steps();
  const double dt = model_.tree().dt();
  const std::vector<double> mask = window_.mask(model_.tree());
  const Vector zero = Vector::Zero(J);
  cell_ops_.assign(C, Matrix(n, n));
  TerminalData unit = TerminalData::Zero(J, model_.tree().leaves());
  AdaptedField injection(J, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    unit(i % J, i / J) = 1.0;
    const AdjointTrajectory adj = adjoint_solve(unit, model_);
    unit(i % J, i / J) = 0.0;
    for (int c = 0; c < C; ++c) {
      for (int k = 1; k <= K; ++k) {
        if (mask[k - 1] == 0.0) continue;
        injection.level(k).noalias() = (dt * mask[k - 1]) * grams_[c] * adj.z.level(k);
      }
      const Matrix y = propagate(model_, zero, &injection).terminal();
      cell_ops_[c].col(i) = Eigen::Map<const Vector>(y.data(), n);
    }
  }
  for (Matrix& g : cell_ops_) g = 0.5 * (g + g.transpose()).eval();
  const Matrix r = propagate(model_, y0_, nullptr).terminal();
  load_ = Eigen::Map<const Vector>(r.data(), n);
}

Matrix PlacementProblem::gram(const Vector& theta) const {
  require(theta.size() == cells(), ErrorKind::InvalidDensity,
          "density has the wrong number of cells");
  Matrix g = Matrix::Zero(dim(), dim());
  for (int c = 0; c < cells(); ++c) {
    if (theta(c) != 0.0) g += theta(c) * cell_ops_[c];
  }
  return g;
}

Vector PlacementProblem::energies(const Vector& eta) const {
  Vector e(cells());
  for (int c = 0; c < cells(); ++c) e(c) = leaf_weight_ * eta.dot(cell_ops_[c] * eta);
  return e;
}

PlacementProblem::Evaluation PlacementProblem::evaluate(const Vector& theta) const {
  Evaluation ev;
  const double rnorm = load_.norm();
  if (rnorm == 0.0) {
    ev.eta = Vector::Zero(dim());
    ev.energies = Vector::Zero(cells());
    return ev;
  }
  const Matrix g = gram(theta);
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::DegenerateObservation,
                "Gram matrix of the density is not positive definite");
  }
  ev.eta = llt.solve(-load_);
  ev.N = -leaf_weight_ * load_.dot(ev.eta);
  ev.energies = energies(ev.eta);
  ev.el_residual = (g * ev.eta + load_).norm() / rnorm;
  return ev;
}

const char* to_string(PlacementMethod m) {
  return m == PlacementMethod::ProjectedGradient ? "projected_gradient" : "frank_wolfe";
}

PlacementMethod parse_method(const std::string& name) {
  if (name == "projected_gradient") return PlacementMethod::ProjectedGradient;
  if (name == "frank_wolfe") return PlacementMethod::FrankWolfe;
  throw Error(ErrorKind::InvalidConfig, "unknown placement method '" + name + "'");
}

namespace {

double stationarity(const PlacementProblem& p, const Vector& theta, const Vector& e) {
  const double scale = e.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return 0.0;
  const Vector step = project_onto_theta(theta + e / scale, p.alpha(), p.grid()).theta();
  return (step - theta).cwiseAbs().maxCoeff();
}

}  // namespace

OptimizeResult optimize_actuator(const PlacementProblem& problem,
                                 const OptimizeOptions& options) {
  require(options.max_iter >= 0 && options.tol > 0.0, ErrorKind::InvalidConfig,
          "optimizer needs max_iter >= 0 and tol > 0");
  const CellGrid& grid = problem.grid();
  const double alpha = problem.alpha();
  Vector theta = options.initial.size() > 0
                     ? ActuatorDensity(grid, options.initial, alpha).theta()
                     : ActuatorDensity::uniform(grid, alpha).theta();

  PlacementProblem::Evaluation ev = problem.evaluate(theta);
  OptimizeResult out;
  out.history.push_back(ev.N);
  auto evaluate_or_fail = [&](const Vector& th) {
    try {
      return problem.evaluate(th);
    } catch (const Error& e) {
      throw Error(ErrorKind::OptimizerFailure,
                  std::string("inner solve failed during optimisation: ") + e.what(), ev.N);
    }
  };

  try {
    if (ev.N == 0.0) {
      out.converged = true;
    } else if (options.method == PlacementMethod::ProjectedGradient) {
      double step = 0.1 / ev.energies.cwiseAbs().maxCoeff();
      for (out.iterations = 0; out.iterations < options.max_iter; ++out.iterations) {
        out.stationarity = stationarity(problem, theta, ev.energies);
        if (out.stationarity <= options.tol) {
          out.converged = true;
          break;
        }
        // Monotone Armijo backtracking along the projection arc, started from
        // the Barzilai–Borwein step.
        Vector cand;
        PlacementProblem::Evaluation next;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
          cand = project_onto_theta(theta + step * ev.energies, alpha, grid).theta();
          const Vector d = cand - theta;
          const double decrease = ev.energies.dot(d);
          if (!(decrease > 0.0)) break;
          next = evaluate_or_fail(cand);
          if (next.N <= ev.N - 1e-4 * decrease) {
            accepted = true;
            break;
          }
          step *= 0.5;
        }
        if (!accepted) {
          out.stationarity = stationarity(problem, theta, ev.energies);
          out.converged = out.stationarity <= std::sqrt(options.tol);
          break;
        }
        const Vector s = cand - theta;
        const Vector y = ev.energies - next.energies;  // difference of gradients
        const double sy = s.dot(y);
        step = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * step;
        theta = cand;
        ev = std::move(next);
        out.history.push_back(ev.N);
      }
    } else {
      const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
      for (out.iterations = 0; out.iterations < options.max_iter; ++out.iterations) {
        const Vector vertex = knapsack_max(ev.energies, alpha, grid).theta.theta();
        const Vector d = vertex - theta;
        const double fw_gap = ev.energies.dot(d);
        out.stationarity = fw_gap / ev.N;
        if (out.stationarity <= options.tol) {
          out.converged = true;
          break;
        }
        // Golden-section search of the convex segment objective.
        auto seg = [&](double g) { return evaluate_or_fail(theta + g * d).N; };
        double a = 0.0, b = 1.0;
        double c1 = b - phi * (b - a), c2 = a + phi * (b - a);
        double f1 = seg(c1), f2 = seg(c2);
        for (int it = 0; it < 60 && b - a > 1e-12; ++it) {
          if (f1 <= f2) {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - phi * (b - a);
            f1 = seg(c1);
          } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + phi * (b - a);
            f2 = seg(c2);
          }
        }
        const double gamma = 0.5 * (a + b);
        const Vector cand = (theta + gamma * d).cwiseMax(0.0).cwiseMin(1.0);
        PlacementProblem::Evaluation next = evaluate_or_fail(cand);
        if (!(next.N < ev.N)) break;
        theta = cand;
        ev = std::move(next);
        out.history.push_back(ev.N);
      }
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::OptimizerFailure) throw;
    out.inner_failure = true;
    out.converged = false;
    out.failure = e.what();
  }

  out.theta = ActuatorDensity(grid, theta, alpha);
  out.N = ev.N;
  out.energies = ev.energies;
  out.eta = ev.eta;
  return out;
}

GameValue minimax_gap(const PlacementProblem& problem, const OptimizeResult& result,
                      double tol) {
  GameValue gv;
  gv.u_plus = 0.5 * result.N;
  const Vector& r = problem.load();
  if (r.norm() == 0.0) {
    gv.converged = true;
    return gv;
  }
  const Eigen::Index n = problem.dim();
  const int C = problem.cells();
  const double w = problem.leaf_weight();
  const Vector& vol = problem.grid().volumes();
  const double mass = problem.alpha() * problem.grid().domain().volume();
  const Matrix zeros = Matrix::Zero(n, n);

  // Cell operators scaled to the expectation: E_c(x) = xᵀ Ĝ_c x.
  std::vector<Matrix> ghat(C);
  for (int c = 0; c < C; ++c) {
    Vector e = Vector::Zero(C);
    e(c) = 1.0;
    ghat[c] = w * problem.gram(e);
  }
  const Vector rhat = w * r;

  // Variables v = (x, ν, s). Constraints g_c = E_c(x) − ν vol_c − s_c < 0 and
  // s_c > 0; objective f0 = ½(ν·mass + Σ s) + r̂·x.
  const Eigen::Index dimv = n + 1 + C;
  Vector v = Vector::Zero(dimv);
  v(n) = 1.0;
  v.tail(C).setOnes();

  auto constraints = [&](const Vector& x) {
    Vector g(C);
    for (int c = 0; c < C; ++c) {
      g(c) = x.head(n).dot(ghat[c] * x.head(n)) - x(n) * vol(c) - x(n + 1 + c);
    }
    return g;
  };
  auto f0 = [&](const Vector& x) {
    return 0.5 * (x(n) * mass + x.tail(C).sum()) + rhat.dot(x.head(n));
  };


  const double scale = std::max(gv.u_plus, 1e-300);
  double t = C / scale;
  const double target = 2.0 * C / (tol * scale);
  Vector grad(dimv);
  Matrix hess(dimv, dimv);
  for (int outer = 0; outer < 200; ++outer) {
    for (int it = 0; it < 200; ++it) {
      const Vector g = constraints(v);
      grad.setZero();
      hess.setZero();
      grad.head(n) = t * rhat;
      grad(n) = 0.5 * t * mass;
      grad.tail(C).setConstant(0.5 * t);
      for (int c = 0; c < C; ++c) {
        const double inv = 1.0 / (-g(c));
        Vector dg = Vector::Zero(dimv);
        dg.head(n) = 2.0 * (ghat[c] * v.head(n));
        dg(n) = -vol(c);
        dg(n + 1 + c) = -1.0;
        grad += inv * dg;
        hess.topLeftCorner(n, n) += (2.0 * inv) * ghat[c];
        hess.selfadjointView<Eigen::Lower>().rankUpdate(dg, inv * inv);
      }
      for (int c = 0; c < C; ++c) {
        const double s = v(n + 1 + c);
        grad(n + 1 + c) -= 1.0 / s;
        hess(n + 1 + c, n + 1 + c) += 1.0 / (s * s);
      }
      // rankUpdate filled the lower triangle only; the cell terms are
      // symmetric, so mirror the lower half.
      hess.triangularView<Eigen::StrictlyUpper>() = hess.transpose();
      // The barrier Hessian is positive definite in the interior; fall back to
      // LDLT only when round-off defeats the Cholesky factorisation.
      Eigen::LLT<Matrix> llt(hess);
      const Vector step =
          llt.info() == Eigen::Success ? Vector(-llt.solve(grad)) : Vector(-hess.ldlt().solve(grad));
      const double decrement = -grad.dot(step);
      ++gv.newton_steps;
      if (!(decrement > 0.0) || decrement < 1e-14) break;
      // Along the Newton direction every constraint is an exact quadratic in
      // the step length, so the line search only needs scalars.
      Vector lin(C), quad(C);
      for (int c = 0; c < C; ++c) {
        const Vector gd = ghat[c] * step.head(n);
        lin(c) = 2.0 * v.head(n).dot(gd) - step(n) * vol(c) - step(n + 1 + c);
        quad(c) = step.head(n).dot(gd);
      }
      const Vector sv = v.tail(C);
      const Vector ds = step.tail(C);
      const double f_lin = t * (0.5 * (step(n) * mass + ds.sum()) + rhat.dot(step.head(n)));
      auto phi_at = [&](double h, bool& ok) {
        const Vector gh = g + h * lin + (h * h) * quad;
        const Vector sh = sv + h * ds;
        ok = (gh.array() < 0.0).all() && (sh.array() > 0.0).all();
        if (!ok) return 0.0;
        return h * f_lin - (-gh.array()).log().sum() - sh.array().log().sum();
      };
      bool feasible = false;
      const double phi0 = phi_at(0.0, feasible);
      double h = 1.0;
      for (int bt = 0; bt < 80; ++bt, h *= 0.5) {
        const double phi1 = phi_at(h, feasible);
        if (feasible && phi1 <= phi0 - 0.25 * h * decrement) break;
      }
      if (!feasible) break;
      v += h * step;
      if (0.5 * decrement < 1e-10) break;
    }
    gv.log.push_back(f0(v));
    if (t >= target) {
      gv.converged = true;
      break;
    }
    t *= 20.0;
  }

  const Vector x = v.head(n);
  Vector e(C);
  for (int c = 0; c < C; ++c) e(c) = x.dot(ghat[c] * x);
  const double knap = knapsack_max(e, problem.alpha(), problem.grid()).value;
  gv.u_minus = -(0.5 * knap + rhat.dot(x));
  gv.gap = gv.u_plus - gv.u_minus;
  return gv;
}

NashReport check_nash(const PlacementProblem& problem, const ActuatorDensity& theta_star,
                      double tol, int probes, std::uint64_t seed) {
  NashReport rep;
  rep.theta_star = theta_star;
  const CellGrid& grid = problem.grid();
  const Vector& vol = grid.volumes();
  const Vector& theta = theta_star.theta();
  const PlacementProblem::Evaluation ev = problem.evaluate(theta);
  rep.energy_per_cell = ev.energies;

  const KnapsackResult knap = knapsack_max(ev.energies, problem.alpha(), grid);
  rep.level = knap.level;
  rep.knapsack_value = knap.value;
  rep.value_gap = knap.value - theta.dot(ev.energies);
  rep.value_ok = rep.value_gap <= tol * std::max(knap.value, 1e-300);

  const Vector density = ev.energies.cwiseQuotient(vol);
  const double band = tol * density.cwiseAbs().maxCoeff();
  for (int c = 0; c < grid.size(); ++c) {
    const bool above = density(c) > rep.level + band;
    const bool below = density(c) < rep.level - band;
    if ((above && theta(c) < 1.0 - tol) || (below && theta(c) > tol)) {
      rep.structure_violation += vol(c);
    }
  }
  rep.structure_ok = rep.structure_violation <= 1e-3 * grid.domain().volume();

  // Inner stationarity from an independent HUM solve with the multiplier B_θ*.
  const GramOperator op(problem.model(), theta_star.multiplier(problem.cell_grams()),
                        problem.window());
  HumOptions hum;
  if (op.dim() <= 2048) {
    hum.dense = true;
    hum.epsilon_schedule = {0.0};
  }
  const HumSolution sol = solve_hum(problem.y0(), op, hum);
  rep.el_residual = sol.el_residual;
  rep.hum_cost = sol.cost_N;
  rep.el_ok = rep.el_residual <= tol;

  if (density.cwiseAbs().maxCoeff() == 0.0) {
    rep.swaps_ok = true;
  } else {
    // Mass may leave a cell with θ > tol and enter one with θ < 1 − tol, but
    // never move between two fractional cells. With every cell fractional no
    // probe is admissible and the band check alone decides.
    auto fractional = [&](int c) { return theta(c) > tol && theta(c) < 1.0 - tol; };
    std::vector<std::pair<int, int>> pairs;
    for (int s = 0; s < grid.size(); ++s) {
      if (!(theta(s) > tol)) continue;
      for (int t = 0; t < grid.size(); ++t) {
        if (t != s && theta(t) < 1.0 - tol && !(fractional(s) && fractional(t))) pairs.emplace_back(s, t);
      }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double base = theta.dot(ev.energies);
    for (int p = 0; p < probes && !pairs.empty(); ++p) {
      const auto [s, t] = pairs[rng() % pairs.size()];
      const double cap = std::min(theta(s) * vol(s), (1.0 - theta(t)) * vol(t));
      const double moved = cap * (0.05 + 0.95 * unit(rng));
      Vector pert = theta;
      pert(s) -= moved / vol(s);
      pert(t) += moved / vol(t);
      ++rep.swap_probes;
      if (pert.dot(ev.energies) < base) ++rep.swap_decreases;
    }
    rep.swaps_ok = pairs.empty() || rep.swap_decreases * 100 >= 99 * rep.swap_probes;
  }
  rep.passed = rep.value_ok && rep.structure_ok && rep.el_ok && rep.swaps_ok;
  return rep;
}

}  // namespace stochctl
