#include "stochctl/hum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Cholesky>

#include "stochctl/error.hpp"

namespace stochctl {

namespace {

TerminalData random_terminal(std::mt19937_64& rng, int rows, Eigen::Index cols) {
  std::normal_distribution<double> normal;
  TerminalData out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) out(r, c) = normal(rng);
  }
  return out;
}

}  // namespace

double inner(const TerminalData& a, const TerminalData& b) { return expected_dot(a, b); }

double norm(const TerminalData& a) { return std::sqrt(expected_sq(a)); }

GramOperator::GramOperator(Model model, Matrix weight, const TimeWindow& window,
                           int certify_pairs, std::uint64_t seed)
    : model_(std::move(model)), weight_(std::move(weight)) {
  const int J = model_.modes();
  require(weight_.rows() == J && weight_.cols() == J, ErrorKind::InvalidConfig,
          "observation weight has the wrong shape");
  mask_ = window.mask(model_.tree());

  std::mt19937_64 rng(seed);
  const Eigen::Index leaves = model_.tree().leaves();
  for (int i = 0; i < certify_pairs; ++i) {
    const TerminalData a = random_terminal(rng, J, leaves);
    const TerminalData b = random_terminal(rng, J, leaves);
    const TerminalData ga = apply(a);
    const TerminalData gb = apply(b);
    const double lhs = inner(ga, b);
    const double rhs = inner(a, gb);
    const double scale = norm(ga) * norm(b) + norm(a) * norm(gb);
    const double err = scale > 0.0 ? std::abs(lhs - rhs) / scale : 0.0;
    certification_error_ = std::max(certification_error_, err);
  }
  if (certification_error_ > 1e-10) {
    throw Error(ErrorKind::InternalConsistency,
                "Gram operator failed the self-adjointness certification",
                certification_error_);
  }
}

AdaptedField GramOperator::control(const AdjointTrajectory& traj) const {
  const int K = model_.steps();
  AdaptedField u(model_.modes(), K);
  for (int k = 1; k <= K; ++k) {
    if (mask_[k - 1] != 0.0) u.level(k) = mask_[k - 1] * traj.z.level(k);
  }
  return u;
}

TerminalData GramOperator::apply(const TerminalData& eta) const {
  const AdjointTrajectory adj = adjoint_solve(eta, model_);
  const int K = model_.steps();
  const double dt = model_.tree().dt();
  AdaptedField injection(model_.modes(), K);
  for (int k = 1; k <= K; ++k) {
    if (mask_[k - 1] != 0.0) {
      injection.level(k).noalias() = (dt * mask_[k - 1]) * weight_ * adj.z.level(k);
    }
  }
  return propagate(model_, Vector::Zero(model_.modes()), &injection).terminal();
}

double GramOperator::quadratic(const AdjointTrajectory& traj) const {
  const double dt = model_.tree().dt();
  double s = 0.0;
  for (int k = 1; k <= model_.steps(); ++k) {
    if (mask_[k - 1] != 0.0) s += dt * mask_[k - 1] * expected_norm_sq(traj.z.level(k), weight_);
  }
  return s;
}

double GramOperator::quadratic(const TerminalData& eta) const {
  return quadratic(adjoint_solve(eta, model_));
}

TerminalData GramOperator::load(const Vector& y0) const {
  return propagate(model_, y0, nullptr).terminal();
}

double GramOperator::control_cost(const AdaptedField& u) const {
  const double dt = model_.tree().dt();
  double s = 0.0;
  for (int k = 1; k <= u.depth(); ++k) s += dt * expected_norm_sq(u.level(k), weight_);
  return s;
}

Matrix GramOperator::dense() const {
  const int J = model_.modes();
  const Eigen::Index leaves = model_.tree().leaves();
  const Eigen::Index n = dim();
  Matrix out(n, n);
  TerminalData unit = TerminalData::Zero(J, leaves);
  for (Eigen::Index i = 0; i < n; ++i) {
    unit(i % J, i / J) = 1.0;
    const TerminalData col = apply(unit);
    out.col(i) = Eigen::Map<const Vector>(col.data(), n);
    unit(i % J, i / J) = 0.0;
  }
  return 0.5 * (out + out.transpose());
}

CgResult conjugate_gradient(const GramOperator& op, double shift, const TerminalData& b,
                            const TerminalData& x0, double tol, int max_iter) {
  CgResult res;
  res.x = x0;
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    res.x.setZero();
    res.converged = true;
    return res;
  }
  TerminalData r = b - op.apply(res.x) - shift * res.x;
  TerminalData p = r;
  double rr = inner(r, r);
  double rel = std::sqrt(rr) / bnorm;
  res.residual_history.push_back(rel);
  while (rel > tol && res.iterations < max_iter) {
    const TerminalData q = op.apply(p) + shift * p;
    const double pq = inner(p, q);
    if (!(pq > 0.0)) break;
    const double alpha = rr / pq;
    res.x += alpha * p;
    r -= alpha * q;
    const double rr_next = inner(r, r);
    p = r + (rr_next / rr) * p;
    rr = rr_next;
    ++res.iterations;
    rel = std::sqrt(rr) / bnorm;
    res.residual_history.push_back(rel);
  }
  if (rel > tol) {
    // Recompute the true residual before declaring failure; the recursive
    // one drifts once the iterate is already accurate.
    const TerminalData true_r = b - op.apply(res.x) - shift * res.x;
    rel = norm(true_r) / bnorm;
    res.residual_history.back() = rel;
  }
  res.converged = rel <= tol;
  return res;
}

HumSolution solve_hum(const Vector& y0, const GramOperator& op, const HumOptions& options) {
  require(!options.epsilon_schedule.empty(), ErrorKind::InvalidConfig,
          "epsilon schedule must not be empty");
  for (double eps : options.epsilon_schedule) {
    require(std::isfinite(eps) && eps >= 0.0, ErrorKind::InvalidConfig,
            "epsilon must be non-negative");
  }
  require(options.tol > 0.0 && options.max_iter > 0, ErrorKind::InvalidConfig,
          "solver tolerance and iteration cap must be positive");

  const Model& model = op.model();
  const int J = model.modes();
  const Eigen::Index leaves = model.tree().leaves();
  const TerminalData r = op.load(y0);
  const double rnorm = norm(r);

  HumSolution sol;
  sol.y0_norm = y0.norm();
  sol.epsilon = options.epsilon_schedule.back();
  sol.eta_star = TerminalData::Zero(J, leaves);

  if (rnorm > 0.0) {
    if (options.dense) {
      const Eigen::Index n = op.dim();
      Matrix g = op.dense();
      g.diagonal().array() += sol.epsilon;
      Eigen::LLT<Matrix> llt(g);
      if (llt.info() != Eigen::Success || (sol.epsilon == 0.0 && llt.rcond() < 1e-14)) {
        throw Error(ErrorKind::DegenerateObservation,
                    "Gram matrix is not positive definite; use epsilon > 0",
                    llt.info() == Eigen::Success ? llt.rcond() : 0.0);
      }
      const Vector rhs = -Eigen::Map<const Vector>(r.data(), n);
      const Vector x = llt.solve(rhs);
      sol.eta_star = Eigen::Map<const TerminalData>(x.data(), J, leaves);
      sol.iterations = 1;
    } else {
      for (double eps : options.epsilon_schedule) {
        require(eps > 0.0, ErrorKind::InvalidConfig,
                "epsilon = 0 requires the dense positive-definite path");
      }
      for (double eps : options.epsilon_schedule) {
        CgResult cg = conjugate_gradient(op, eps, -r, sol.eta_star, options.tol, options.max_iter);
        sol.iterations += cg.iterations;
        sol.residual_history.insert(sol.residual_history.end(), cg.residual_history.begin(),
                                    cg.residual_history.end());
        if (options.history != nullptr) *options.history = sol.residual_history;
        if (!cg.converged) {
          throw Error(ErrorKind::IterationLimit, "conjugate gradients did not converge",
                      cg.residual_history.back());
        }
        sol.eta_star = std::move(cg.x);
      }
    }
  }

  sol.phi_star = adjoint_solve(sol.eta_star, model);
  sol.u_star = op.control(sol.phi_star);
  sol.cost_N = op.quadratic(sol.phi_star);
  sol.value_V = 0.5 * sol.cost_N + inner(r, sol.eta_star);
  if (rnorm > 0.0) {
    const TerminalData resid = op.apply(sol.eta_star) + sol.epsilon * sol.eta_star + r;
    sol.el_residual = norm(resid) / rnorm;
  }
  for (int k = 1; k <= model.steps(); ++k) {
    sol.control_linf =
        std::max(sol.control_linf, std::sqrt(expected_norm_sq(sol.u_star.level(k), op.weight())));
  }
  sol.terminal_residual = verify_null_control(sol, y0, op);
  return sol;
}

double verify_null_control(const HumSolution& solution, const Vector& y0,
                           const GramOperator& op) {
  const ForwardTrajectory fwd = forward_solve(y0, solution.u_star, op.weight(), op.model());
  return std::sqrt(expected_sq(fwd.terminal()));
}

double el_pairing(const HumSolution& solution, const GramOperator& op, const TerminalData& r,
                  const TerminalData& eta_test) {
  const AdjointTrajectory psi = adjoint_solve(eta_test, op.model());
  const double dt = op.model().tree().dt();
  double s = inner(r, eta_test);
  for (int k = 1; k <= op.model().steps(); ++k) {
    s += dt * expected_dot(solution.u_star.level(k), op.weight() * psi.z.level(k));
  }
  return s;
}

MinimalNormCheck minimal_norm_over_admissible(const HumSolution& solution,
                                              const GramOperator& op, int trials,
                                              std::uint64_t seed) {
  const Model& model = op.model();
  const int J = model.modes();
  const int K = model.steps();
  const double dt = model.tree().dt();
  const std::vector<double>& mask = op.mask();
  const double base_cost = op.control_cost(solution.u_star);

  auto terminal_of = [&](const AdaptedField& v) {
    AdaptedField injection(J, K);
    for (int k = 1; k <= K; ++k) injection.level(k).noalias() = dt * op.weight() * v.level(k);
    return propagate(model, Vector::Zero(J), &injection).terminal();
  };
  auto pairing = [&](const AdaptedField& a, const AdaptedField& b) {
    double s = 0.0;
    for (int k = 1; k <= K; ++k) s += dt * expected_dot(a.level(k), op.weight() * b.level(k));
    return s;
  };

  MinimalNormCheck out;
  out.min_cost_increase = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> log_scale(-3.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    AdaptedField v(J, K);
    for (int k = 1; k <= K; ++k) {
      if (mask[k - 1] == 0.0) continue;
      Matrix& m = v.level(k);
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (int j = 0; j < J; ++j) m(j, c) = normal(rng);
      }
    }
    const double raw_cost = op.control_cost(v);
    const TerminalData lv = terminal_of(v);
    const double lv_norm = norm(lv);
    if (lv_norm > 0.0) {
      const CgResult cg =
          conjugate_gradient(op, 0.0, lv, TerminalData::Zero(J, lv.cols()), 1e-12, 20000);
      if (!cg.converged) {
        ++out.skipped;
        continue;
      }
      v += -1.0 * op.control(adjoint_solve(cg.x, model));
      out.max_null_residual = std::max(out.max_null_residual, norm(terminal_of(v)) / lv_norm);
    }
    // A draw that lies in the range of the adjoint leaves only round-off.
    const double v_cost = op.control_cost(v);
    if (!(v_cost > 1e-20 * raw_cost)) {
      ++out.skipped;
      continue;
    }
    // Spread the perturbation size over several orders of magnitude relative
    // to the optimal cost.
    const double target = (base_cost > 0.0 ? base_cost : 1.0) * std::pow(10.0, log_scale(rng));
    v *= std::sqrt(target / v_cost);
    const double cross = pairing(solution.u_star, v);
    const double increase = 2.0 * cross + op.control_cost(v);
    ++out.trials;
    out.min_cost_increase = std::min(out.min_cost_increase, increase);
    if (base_cost > 0.0) {
      out.max_orthogonality =
          std::max(out.max_orthogonality, std::abs(cross) / std::sqrt(base_cost * target));
    }
    if (increase < -1e-9 * std::max(base_cost, target)) out.ok = false;
  }
  if (out.trials == 0) out.min_cost_increase = 0.0;
  return out;
}

}  // namespace stochctl
