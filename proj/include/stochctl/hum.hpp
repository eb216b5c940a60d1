#pragma once

// Minimal-norm null controls by the Hilbert uniqueness method.
//
// For terminal data η let z(·; η) be the adjoint trajectory. With the
// observation weight W (= B_θ for a density, or the Gram matrix of a region)
// and the window mask χ, the controllability Gram operator is
//
//   <G η, ξ> = Σ_{k=1..K} dt χ_{k-1} E(W z_k(η), z_k(ξ)),
//
// realised as one backward sweep followed by one forward sweep. The load r is
// the free terminal state, <r, η> = (y_0, z_0(η)). The optimal terminal data
// solves (G + εI) η* = −r, and the control is u* = χ φ* with φ* = z(·; η*).
// All inner products on terminal data are expectations over the leaves.

#include <cstdint>
#include <vector>

#include "stochctl/dynamics.hpp"

namespace stochctl {

class GramOperator {
 public:
  /// Certifies self-adjointness on `certify_pairs` random pairs (relative
  /// tolerance 1e-10) and throws InternalConsistency on failure.
  GramOperator(Model model, Matrix weight, const TimeWindow& window,
               int certify_pairs = 10, std::uint64_t seed = 0x5eed);

  const Model& model() const { return model_; }
  const Matrix& weight() const { return weight_; }
  const std::vector<double>& mask() const { return mask_; }
  Eigen::Index dim() const { return model_.terminal_dim(); }
  double certification_error() const { return certification_error_; }

  TerminalData apply(const TerminalData& eta) const;
  /// Σ dt χ E z^T W z for an already computed adjoint trajectory.
  double quadratic(const AdjointTrajectory& traj) const;
  double quadratic(const TerminalData& eta) const;
  /// Free terminal state r for the initial state y0.
  TerminalData load(const Vector& y0) const;
  /// The control χ_E z (levels 1..K, level 0 zero) induced by a trajectory.
  AdaptedField control(const AdjointTrajectory& traj) const;
  /// Σ_k dt E u_k^T W u_k.
  double control_cost(const AdaptedField& u) const;

  /// Dense matrix of G in leaf-major coordinates (column-major flattening of
  /// the J × 2^K terminal matrix). Symmetric by construction of the sweeps.
  Matrix dense() const;

 private:
  Model model_;
  Matrix weight_;
  std::vector<double> mask_;
  double certification_error_ = 0.0;
};

double inner(const TerminalData& a, const TerminalData& b);
double norm(const TerminalData& a);

struct CgResult {
  TerminalData x;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;  ///< relative residuals per iteration
};

/// Conjugate gradients for (G + shift·I) x = b from the starting point x0.
CgResult conjugate_gradient(const GramOperator& op, double shift, const TerminalData& b,
                            const TerminalData& x0, double tol, int max_iter);

struct HumOptions {
  /// Tikhonov continuation; the solve at each ε warm-starts the next.
  std::vector<double> epsilon_schedule{1e-4, 1e-6, 1e-8, 1e-10};
  double tol = 1e-10;
  int max_iter = 5000;
  /// Direct Cholesky solve of the assembled Gram matrix instead of CG.
  bool dense = false;
  /// When set, receives the CG residual history even if the solve fails.
  std::vector<double>* history = nullptr;
};

struct HumSolution {
  TerminalData eta_star;
  AdjointTrajectory phi_star;
  AdaptedField u_star;           ///< coefficients in the actuated family {β e_j}
  double cost_N = 0.0;           ///< Σ dt E‖β φ*‖²
  double value_V = 0.0;          ///< ½<G η*, η*> + <r, η*>
  double terminal_residual = 0.0;///< (E‖y(T; u*)‖²)^{1/2}
  double el_residual = 0.0;      ///< ‖(G + ε)η* + r‖ / ‖r‖
  double epsilon = 0.0;
  double y0_norm = 0.0;
  double control_linf = 0.0;     ///< max_k (E‖u*_k‖²)^{1/2}
  int iterations = 0;
  std::vector<double> residual_history;
};

/// Throws IterationLimit (value = last relative residual) if CG stalls, and
/// DegenerateObservation if ε = 0 and the Gram matrix is not positive
/// definite. ε = 0 is only accepted on the dense path.
HumSolution solve_hum(const Vector& y0, const GramOperator& op, const HumOptions& options);

/// Recomputes the forward state driven by u* and returns (E‖y_K‖²)^{1/2}.
double verify_null_control(const HumSolution& solution, const Vector& y0,
                           const GramOperator& op);

/// Σ dt E(u*, W ψ) + <r, η_test> with ψ = z(·; η_test): the discrete
/// Euler–Lagrange pairing, which equals −ε<η*, η_test>.
double el_pairing(const HumSolution& solution, const GramOperator& op,
                  const TerminalData& r, const TerminalData& eta_test);

struct MinimalNormCheck {
  bool ok = true;
  int trials = 0;
  int skipped = 0;
  double min_cost_increase = 0.0;   ///< min over samples of cost(û) − cost(u*)
  double max_orthogonality = 0.0;   ///< max |<u*, v>| / (‖u*‖ ‖v‖)
  double max_null_residual = 0.0;   ///< max ‖L v‖ / ‖L v_raw‖ after projection
};

/// Perturbs u* by random directions projected onto the null space of the
/// control-to-terminal-state map and checks that the cost never decreases.
MinimalNormCheck minimal_norm_over_admissible(const HumSolution& solution,
                                              const GramOperator& op, int trials,
                                              std::uint64_t seed);

}  // namespace stochctl
