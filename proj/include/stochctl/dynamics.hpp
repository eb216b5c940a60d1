#pragma once

// Forward controlled stochastic heat dynamics and the backward adjoint on the
// filtration tree, in modal coordinates.
//
// Forward step (k -> k+1, along each branch with increment ΔW_k):
//
//   y_{k+1} = P (1 + a_k ΔW_k) y_k + dt · B · u_{k+1}
//
// with P the diagonal stiff propagator and u_{k+1} the F_{t_{k+1}}-measurable
// control acting on (t_k, t_{k+1}]. The backward sweep is the exact transpose:
//
//   m = ½(z_up + z_down),  Z_k = (z_up − z_down) / (2√dt),
//   z_k = P (m + a_k dt Z_k),
//
// so that Σ_{k=1..K} dt E(B u_k, z_k) + (y_0, z_0) = E(y_K, η) holds to
// round-off. As dt -> 0 the backward sweep is the implicit scheme for
// dz = −Az dt − a Z dt + Z dw.

#include <vector>

#include "stochctl/spectral.hpp"
#include "stochctl/stochastic_grid.hpp"

namespace stochctl {

enum class Propagator {
  ImplicitEuler,  ///< P = (I + dt Λ)^{-1}
  Exponential,    ///< P = exp(−dt Λ)
};

const char* to_string(Propagator p);
Propagator parse_propagator(const std::string& name);

/// Everything the sweeps need: basis, tree, noise and the stiff propagator.
class Model {
 public:
  Model(SpectralBasis basis, FiltrationTree tree, NoiseCoefficient noise,
        Propagator propagator = Propagator::ImplicitEuler);

  const SpectralBasis& basis() const { return basis_; }
  const FiltrationTree& tree() const { return tree_; }
  const NoiseCoefficient& noise() const { return noise_; }
  Propagator propagator() const { return propagator_; }
  int modes() const { return basis_.size(); }
  int steps() const { return tree_.steps(); }
  /// Dimension of the terminal-data space, J · 2^K.
  Eigen::Index terminal_dim() const { return modes() * tree_.leaves(); }

  /// Diagonal of the stiff propagator P.
  const Vector& step_factor() const { return factor_; }

  /// Negative-control hook: when set, the backward sweep drops the a·dt·Z
  /// coupling and applies P twice, so it is no longer the transpose of the
  /// forward sweep.
  void set_corrupt_adjoint(bool on) { corrupt_adjoint_ = on; }
  bool corrupt_adjoint() const { return corrupt_adjoint_; }

 private:
  SpectralBasis basis_;
  FiltrationTree tree_;
  NoiseCoefficient noise_;
  Propagator propagator_;
  Vector factor_;
  bool corrupt_adjoint_ = false;
};

struct ForwardTrajectory {
  AdaptedField y;
  const Matrix& terminal() const { return y.level(y.depth()); }
};

struct AdjointTrajectory {
  AdaptedField z;     ///< levels 0..K, z_K = η
  AdaptedField Zmart; ///< levels 0..K-1, martingale integrand of each step
  const TerminalData& terminal() const { return z.level(z.depth()); }
  /// z(0) is deterministic because F_0 is trivial.
  Vector initial() const { return z.level(0).col(0); }
};

/// Forward sweep with y(0) = y0 and additive injections g_k (levels 1..K of
/// `injection`; level 0 is ignored): y_k = P(1 + a ΔW) y_{k-1} + g_k.
/// Pass nullptr for no injection.
ForwardTrajectory propagate(const Model& model, const Vector& y0,
                            const AdaptedField* injection);

/// Controlled forward equation with control coefficients `control` (levels
/// 1..K) and multiplier matrix B: injection g_k = dt · B · u_k.
ForwardTrajectory forward_solve(const Vector& y0, const AdaptedField& control,
                                const Matrix& multiplier, const Model& model);

AdjointTrajectory adjoint_solve(const TerminalData& eta, const Model& model);

/// Backward sweep on the recombining lattice for terminal data that depends
/// on the path only through W_T. Column d of level k is the node with d down
/// moves, W = √dt (k − 2d). Uses the same step as adjoint_solve, so for such
/// data both agree node by node; it reaches step counts the full tree cannot.
std::vector<Matrix> adjoint_solve_lattice(const Matrix& eta_by_downs, const SpectralBasis& basis,
                                          double horizon, const NoiseCoefficient& noise,
                                          Propagator propagator);

struct DualityGap {
  double control_pairing = 0.0;  ///< Σ_k dt E(u_k, B z_k)
  double initial_pairing = 0.0;  ///< (y0, z(0))
  double terminal_pairing = 0.0; ///< E(y_K, η)
  double gap = 0.0;
  double relative = 0.0;         ///< gap / (sum of absolute pairings)
};

DualityGap duality_identity(const Vector& y0, const AdaptedField& control,
                            const Matrix& multiplier, const TerminalData& eta,
                            const Model& model);

/// Per-level CSV: level, t, E y_k (J columns), E‖y_k‖².
void write_trajectory_csv(std::ostream& out, const AdaptedField& field,
                          const FiltrationTree& tree);

}  // namespace stochctl
