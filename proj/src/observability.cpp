#include "stochctl/observability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>

#include "stochctl/error.hpp"

namespace stochctl {

DecayCheck check_decay(const TerminalData& eta, double cutoff, const Model& model) {
  require(cutoff >= 0.0, ErrorKind::InvalidConfig, "decay cutoff must be non-negative");
  TerminalData high = eta;
  const Vector& lambda = model.basis().eigenvalues();
  for (int j = 0; j < model.modes(); ++j) {
    if (lambda(j) <= cutoff) high.row(j).setZero();
  }
  const AdjointTrajectory adj = adjoint_solve(high, model);
  const double full = expected_sq(eta);
  const double rate = -2.0 * cutoff + model.noise().tau();
  const FiltrationTree& tree = model.tree();

  DecayCheck out;
  out.margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= model.steps(); ++k) {
    const double bound = std::exp(rate * (tree.horizon() - tree.time(k))) * full;
    const double m = bound - expected_sq(adj.z.level(k));
    if (m < out.margin) {
      out.margin = m;
      out.worst_level = k;
    }
    if (m < -1e-12 * std::max(bound, full)) ++out.violations;
  }
  return out;
}

InterpolationResult check_interpolation(const TerminalData& eta, const Matrix& region_gram,
                                        int t_index, const Model& model) {
  const FiltrationTree& tree = model.tree();
  require(t_index >= 0 && t_index < model.steps(), ErrorKind::InvalidConfig,
          "interpolation time index must lie before the horizon");
  const AdjointTrajectory adj = adjoint_solve(eta, model);
  const Matrix& z = adj.z.level(t_index);

  InterpolationResult out;
  out.s = tree.horizon() - tree.time(t_index);
  const double a = expected_sq(z);
  if (a == 0.0) return out;
  const double observed = expected_norm_sq(z, region_gram);
  if (!(observed > 1e-300)) {
    throw Error(ErrorKind::DegenerateObservation,
                "observation region does not see the adjoint at this time", observed);
  }
  out.ratio = a / (std::sqrt(observed) * std::sqrt(expected_sq(eta)));

  // K e^{K/s} is increasing in K ≥ 0, so the smallest admissible K is the
  // root of K e^{K/s} = ratio.
  auto f = [&](double k) { return k * std::exp(k / out.s); };
  double lo = 0.0;
  double hi = 1.0;
  while (f(hi) < out.ratio) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < out.ratio ? lo : hi) = mid;
  }
  out.k_star = hi;
  return out;
}

int gram_deficiency(const GramOperator& op) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(op.dense(), Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  int count = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) <= 1e-12 * top) ++count;
  }
  return top > 0.0 ? count : static_cast<int>(ev.size());
}

L2Constant l2_observability_constant(const GramOperator& op, double tol, int max_iter) {
  require(tol > 0.0 && max_iter > 0, ErrorKind::InvalidConfig,
          "power iteration needs a positive tolerance and iteration cap");
  const Model& model = op.model();
  const int J = model.modes();
  const double inner_tol = std::min(1e-12, 1e-2 * tol);

  TerminalData xi = TerminalData::Zero(J, model.tree().leaves());
  L2Constant out;
  auto apply_m = [&](const Vector& v) {
    const TerminalData rhs = op.load(v);
    CgResult cg = conjugate_gradient(op, 0.0, rhs, xi, inner_tol, 20000);
    out.inner_iterations += cg.iterations;
    if (!cg.converged) {
      const double deficiency = op.dim() <= 2048 ? gram_deficiency(op) : -1.0;
      throw Error(ErrorKind::DegenerateObservation,
                  "observation Gram operator is singular on the terminal-data space",
                  deficiency);
    }
    xi = std::move(cg.x);
    return Vector(adjoint_solve(xi, model).initial());
  };

  // Start from a fixed generic direction so that no eigenvector is missed.
  Vector v(J);
  for (int j = 0; j < J; ++j) v(j) = 1.0 + 0.1 * std::sin(1.7 * (j + 1));
  v.normalize();
  double rho = 0.0;
  for (out.iterations = 1; out.iterations <= max_iter; ++out.iterations) {
    const Vector mv = apply_m(v);
    const double rho_next = v.dot(mv);
    const double resid = (mv - rho_next * v).norm();
    const bool settled = std::abs(rho_next - rho) <= tol * std::abs(rho_next) &&
                         resid <= std::sqrt(tol) * std::abs(rho_next);
    rho = rho_next;
    const double n = mv.norm();
    if (n == 0.0) break;
    // Rescale the warm start with the iterate.
    xi /= n;
    v = mv / n;
    if (settled || resid == 0.0) {
      out.converged = true;
      break;
    }
  }
  out.iterations = std::min(out.iterations, max_iter);
  out.constant = std::max(rho, 0.0);
  out.top_direction = v;
  return out;
}

namespace {

struct L1Eval {
  double ratio = 0.0;
  bool finite = true;
  TerminalData grad;
};

L1Eval l1_evaluate(const TerminalData& eta, const GramOperator& op, bool with_grad) {
  const Model& model = op.model();
  const int K = model.steps();
  const double dt = model.tree().dt();
  const std::vector<double>& mask = op.mask();
  const AdjointTrajectory adj = adjoint_solve(eta, model);
  const Vector z0 = adj.initial();
  const double n = z0.squaredNorm();

  std::vector<double> sq(K + 1, 0.0);
  double d = 0.0;
  for (int k = 1; k <= K; ++k) {
    if (mask[k - 1] == 0.0) continue;
    const double q = expected_norm_sq(adj.z.level(k), op.weight());
    sq[k] = std::sqrt(std::max(q, 0.0));
    d += dt * mask[k - 1] * sq[k];
  }

  L1Eval out;
  if (!(d > 0.0)) {
    out.finite = n == 0.0;
    out.ratio = out.finite ? 0.0 : std::numeric_limits<double>::infinity();
    return out;
  }
  out.ratio = n / (d * d);
  if (!with_grad) return out;

  // ∇n = 2 S*S η and ∇D = Σ_k (w_k / √q_k) T_k, where T_k is the forward
  // response to the injection W z_k at level k alone.
  AdaptedField injection(model.modes(), K);
  for (int k = 1; k <= K; ++k) {
    if (mask[k - 1] == 0.0 || sq[k] <= 1e-300) continue;
    injection.level(k).noalias() = (dt * mask[k - 1] / sq[k]) * op.weight() * adj.z.level(k);
  }
  const TerminalData grad_d =
      propagate(model, Vector::Zero(model.modes()), &injection).terminal();
  const TerminalData grad_n = 2.0 * propagate(model, z0, nullptr).terminal();
  out.grad = grad_n / (d * d) - (2.0 * n / (d * d * d)) * grad_d;
  return out;
}

}  // namespace

double l1_ratio(const TerminalData& eta, const GramOperator& op) {
  return l1_evaluate(eta, op, false).ratio;
}

L1Constant l1_observability_constant(const GramOperator& op, const L1Options& options) {
  require(options.restarts >= 1, ErrorKind::InvalidConfig, "l1 estimate needs restarts >= 1");
  require(options.iterations >= 0, ErrorKind::InvalidConfig, "iteration count must be >= 0");
  const Model& model = op.model();
  const int J = model.modes();
  const Eigen::Index leaves = model.tree().leaves();

  std::vector<TerminalData> starts = options.candidates;
  // Deterministic lowest mode at every leaf, then Gaussian draws.
  starts.push_back(TerminalData::Zero(J, leaves));
  starts.back().row(0).setOnes();
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  for (int r = 0; r < options.restarts; ++r) {
    TerminalData s(J, leaves);
    for (Eigen::Index c = 0; c < leaves; ++c) {
      for (int j = 0; j < J; ++j) s(j, c) = normal(rng);
    }
    starts.push_back(std::move(s));
  }

  L1Constant out;
  bool any = false;
  for (TerminalData eta : starts) {
    require(eta.rows() == J && eta.cols() == leaves, ErrorKind::InvalidConfig,
            "l1 candidate has the wrong shape");
    const double nrm = norm(eta);
    if (nrm == 0.0) {
      ++out.discarded;
      continue;
    }
    eta /= nrm;
    L1Eval cur = l1_evaluate(eta, op, true);
    ++out.evaluations;
    if (!cur.finite) {
      ++out.discarded;
      continue;
    }
    double step = 0.5;
    for (int it = 0; it < options.iterations && step > 1e-10; ++it) {
      const double gnorm = norm(cur.grad);
      if (!(gnorm > 0.0)) break;
      TerminalData trial = eta + (step / gnorm) * cur.grad;
      trial /= norm(trial);
      L1Eval next = l1_evaluate(trial, op, true);
      ++out.evaluations;
      if (next.finite && next.ratio > cur.ratio) {
        eta = std::move(trial);
        cur = std::move(next);
        step = std::min(1.0, 1.5 * step);
      } else {
        step *= 0.5;
      }
    }
    if (!any || cur.ratio > out.lower_bound) {
      out.lower_bound = cur.ratio;
      out.argmax = eta;
    }
    any = true;
  }
  if (!any) {
    throw Error(ErrorKind::DegenerateObservation,
                "every l1 candidate had a vanishing observation", out.discarded);
  }
  return out;
}

TelescopingSequence build_telescoping(double anchor, double start, double C, int count,
                                      double horizon) {
  require(anchor < start, ErrorKind::InvalidConfig, "telescoping anchor must precede the start");
  require(start < horizon, ErrorKind::InvalidConfig, "telescoping start must precede the horizon");
  require(C > 0.0, ErrorKind::InvalidConfig, "telescoping constant must be positive");
  require(count >= 2, ErrorKind::InvalidConfig, "telescoping prefix needs at least two terms");
  TelescopingSequence seq;
  seq.anchor = anchor;
  seq.start = start;
  seq.contraction = (C + 0.5) / (C + 1.0);
  double factor = 1.0;
  for (int m = 0; m < count; ++m) {
    seq.l.push_back(anchor + (start - anchor) * factor);
    factor *= seq.contraction;
  }
  for (int m = 0; m + 1 < count; ++m) {
    seq.tau.push_back(seq.l[m + 1] + (seq.l[m] - seq.l[m + 1]) / 6.0);
  }
  return seq;
}

TelescopingCheck check_telescoping(const TelescopingSequence& seq,
                                   const TimeWindow* density_window, double rho) {
  TelescopingCheck out;
  out.min_density_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < seq.tau.size(); ++m) {
    const double hi = seq.l[m];
    const double lo = seq.l[m + 1];
    const double gap = hi - lo;
    if (!(lo < seq.tau[m] && seq.tau[m] < hi)) out.ordered = false;
    const double err = std::abs((hi - seq.tau[m]) - 5.0 * gap / 6.0);
    out.max_gap_error = std::max(out.max_gap_error, err / gap);
    if (m + 2 < seq.l.size()) {
      const double next_gap = seq.l[m + 1] - seq.l[m + 2];
      out.max_gap_error =
          std::max(out.max_gap_error, std::abs(next_gap - seq.contraction * gap) / gap);
    }
    if (density_window != nullptr) {
      double covered = 0.0;
      for (const Interval& iv : density_window->intervals()) {
        covered += std::max(0.0, std::min(iv.hi, hi) - std::max(iv.lo, lo));
      }
      out.min_density_ratio = std::min(out.min_density_ratio, covered / gap);
    }
  }
  out.gaps_ok = out.max_gap_error <= 1e-9;
  if (density_window != nullptr) {
    out.window_density_ok = out.min_density_ratio >= rho;
  } else {
    out.min_density_ratio = 0.0;
  }
  return out;
}

LevelSetBound level_set_bound(const CellGrid& grid, const Vector& beta, double alpha) {
  validate_budget(alpha);
  require(beta.size() == grid.size(), ErrorKind::InvalidDensity,
          "density has the wrong number of cells");
  // Validates 0 ≤ β ≤ 1 and the mass of β².
  const ActuatorDensity density(grid, beta.cwiseAbs2(), alpha);
  for (Eigen::Index c = 0; c < beta.size(); ++c) {
    require(beta(c) >= 0.0, ErrorKind::InvalidDensity, "density values must be non-negative");
  }
  LevelSetBound out;
  out.level = std::sqrt(alpha / 2.0);
  for (int c = 0; c < grid.size(); ++c) {
    if (beta(c) >= out.level) out.measure += grid.volumes()(c);
  }
  out.bound = alpha * grid.domain().volume() / (2.0 - alpha);
  out.holds = out.measure >= out.bound - 1e-12;
  return out;
}

}  // namespace stochctl
