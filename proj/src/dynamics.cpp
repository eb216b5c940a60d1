#include "stochctl/dynamics.hpp"

#include <cmath>
#include <ostream>

#include "stochctl/error.hpp"

namespace stochctl {

const char* to_string(Propagator p) {
  switch (p) {
    case Propagator::ImplicitEuler:
      return "implicit_euler";
    case Propagator::Exponential:
      return "exponential";
  }
  return "?";
}

Propagator parse_propagator(const std::string& name) {
  if (name == "implicit_euler") return Propagator::ImplicitEuler;
  if (name == "exponential") return Propagator::Exponential;
  throw Error(ErrorKind::InvalidConfig, "unknown propagator '" + name + "'");
}

Model::Model(SpectralBasis basis, FiltrationTree tree, NoiseCoefficient noise,
             Propagator propagator)
    : basis_(std::move(basis)),
      tree_(tree),
      noise_(std::move(noise)),
      propagator_(propagator) {
  require(basis_.size() >= 1, ErrorKind::InvalidConfig, "model needs at least one mode");
  require(noise_.steps() == tree_.steps(), ErrorKind::InvalidConfig,
          "noise coefficient needs one value per tree step");
  const double dt = tree_.dt();
  const Vector& lambda = basis_.eigenvalues();
  if (propagator_ == Propagator::ImplicitEuler) {
    factor_ = (1.0 + dt * lambda.array()).inverse().matrix();
  } else {
    factor_ = (-dt * lambda.array()).exp().matrix();
  }
}

ForwardTrajectory propagate(const Model& model, const Vector& y0,
                            const AdaptedField* injection) {
  const int J = model.modes();
  const int K = model.steps();
  require(y0.size() == J, ErrorKind::InvalidConfig, "initial state has the wrong length");
  if (injection != nullptr) {
    require(injection->modes() == J && injection->depth() == K, ErrorKind::InvalidConfig,
            "injection field does not match the model");
  }
  const FiltrationTree& tree = model.tree();
  const Vector& factor = model.step_factor();

  ForwardTrajectory out{AdaptedField(J, K)};
  out.y.level(0).col(0) = y0;
  for (int k = 0; k < K; ++k) {
    const Matrix& cur = out.y.level(k);
    Matrix& next = out.y.level(k + 1);
    const double up = 1.0 + model.noise()[k] * tree.sqrt_dt();
    const double down = 1.0 - model.noise()[k] * tree.sqrt_dt();
    for (Eigen::Index p = 0; p < cur.cols(); ++p) {
      const Vector base = factor.cwiseProduct(cur.col(p));
      next.col(2 * p) = up * base;
      next.col(2 * p + 1) = down * base;
    }
    if (injection != nullptr) next += injection->level(k + 1);
  }
  return out;
}

ForwardTrajectory forward_solve(const Vector& y0, const AdaptedField& control,
                                const Matrix& multiplier, const Model& model) {
  const int J = model.modes();
  require(multiplier.rows() == J && multiplier.cols() == J, ErrorKind::InvalidConfig,
          "multiplier matrix has the wrong shape");
  require(control.modes() == J && control.depth() == model.steps(), ErrorKind::InvalidConfig,
          "control field does not match the model");
  AdaptedField injection(J, model.steps());
  const double dt = model.tree().dt();
  for (int k = 1; k <= model.steps(); ++k) {
    injection.level(k).noalias() = dt * multiplier * control.level(k);
  }
  return propagate(model, y0, &injection);
}

AdjointTrajectory adjoint_solve(const TerminalData& eta, const Model& model) {
  const int J = model.modes();
  const int K = model.steps();
  const FiltrationTree& tree = model.tree();
  require(eta.rows() == J && eta.cols() == tree.leaves(), ErrorKind::InvalidConfig,
          "terminal data does not match the model");
  const Vector& factor = model.step_factor();
  const double dt = tree.dt();
  const double half_inv_sqrt_dt = 0.5 / tree.sqrt_dt();
  const Vector corrupted = factor.cwiseProduct(factor);

  AdjointTrajectory out{AdaptedField(J, K), AdaptedField(J, K - 1)};
  out.z.level(K) = eta;
  for (int k = K - 1; k >= 0; --k) {
    const Matrix& child = out.z.level(k + 1);
    Matrix& cur = out.z.level(k);
    Matrix& mart = out.Zmart.level(k);
    const double coupling = model.corrupt_adjoint() ? 0.0 : model.noise()[k] * dt;
    const Vector& f = model.corrupt_adjoint() ? corrupted : factor;
    for (Eigen::Index p = 0; p < cur.cols(); ++p) {
      const auto u = child.col(2 * p);
      const auto d = child.col(2 * p + 1);
      mart.col(p) = half_inv_sqrt_dt * (u - d);
      cur.col(p) = f.cwiseProduct(0.5 * (u + d) + coupling * mart.col(p));
    }
  }
  return out;
}

std::vector<Matrix> adjoint_solve_lattice(const Matrix& eta_by_downs, const SpectralBasis& basis,
                                          double horizon, const NoiseCoefficient& noise,
                                          Propagator propagator) {
  const int K = noise.steps();
  const int J = basis.size();
  require(K >= 1 && horizon > 0.0, ErrorKind::InvalidConfig, "lattice needs K >= 1 and T > 0");
  require(eta_by_downs.rows() == J && eta_by_downs.cols() == K + 1, ErrorKind::InvalidConfig,
          "lattice terminal data must be J x (K + 1)");
  const double dt = horizon / K;
  const double sqrt_dt = std::sqrt(dt);
  const Vector factor = propagator == Propagator::ImplicitEuler
                            ? (1.0 + dt * basis.eigenvalues().array()).inverse().matrix().eval()
                            : (-dt * basis.eigenvalues().array()).exp().matrix().eval();
  std::vector<Matrix> z(K + 1);
  z[K] = eta_by_downs;
  for (int k = K - 1; k >= 0; --k) {
    const Matrix& child = z[k + 1];
    z[k].resize(J, k + 1);
    for (int d = 0; d <= k; ++d) {
      const auto u = child.col(d);
      const auto dn = child.col(d + 1);
      const Vector mart = (0.5 / sqrt_dt) * (u - dn);
      z[k].col(d) = factor.cwiseProduct(0.5 * (u + dn) + noise[k] * dt * mart);
    }
  }
  return z;
}

DualityGap duality_identity(const Vector& y0, const AdaptedField& control,
                            const Matrix& multiplier, const TerminalData& eta,
                            const Model& model) {
  const ForwardTrajectory fwd = forward_solve(y0, control, multiplier, model);
  const AdjointTrajectory adj = adjoint_solve(eta, model);
  const double dt = model.tree().dt();

  DualityGap g;
  for (int k = 1; k <= model.steps(); ++k) {
    g.control_pairing += dt * expected_dot(control.level(k), multiplier * adj.z.level(k));
  }
  g.initial_pairing = y0.dot(adj.initial());
  g.terminal_pairing = expected_dot(fwd.terminal(), eta);
  g.gap = std::abs(g.control_pairing + g.initial_pairing - g.terminal_pairing);
  const double scale = std::abs(g.control_pairing) + std::abs(g.initial_pairing) +
                       std::abs(g.terminal_pairing);
  g.relative = scale > 0.0 ? g.gap / scale : 0.0;
  return g;
}

void write_trajectory_csv(std::ostream& out, const AdaptedField& field,
                          const FiltrationTree& tree) {
  out << "level,t";
  for (int j = 0; j < field.modes(); ++j) out << ",mean_c" << j + 1;
  out << ",second_moment\n";
  out.precision(17);
  for (int k = 0; k <= field.depth(); ++k) {
    const Matrix& m = field.level(k);
    const Vector mean = m.rowwise().mean();
    out << k << ',' << tree.time(k);
    for (int j = 0; j < field.modes(); ++j) out << ',' << mean(j);
    out << ',' << expected_sq(m) << '\n';
  }
}

}  // namespace stochctl
