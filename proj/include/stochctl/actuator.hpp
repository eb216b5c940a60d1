#pragma once

// Relaxed optimal actuator placement over
//   Θ = {θ cellwise constant, 0 ≤ θ ≤ 1, Σ θ_c vol_c = α|D|}.
//
// For a density θ the Gram operator is affine, G_θ = Σ_c θ_c G_c, where G_c
// is the Gram operator observed through the cell Gram matrix Γ_c. The
// objective N(θ) = <r, G_θ^{-1} r> is the minimal control cost and is convex
// in θ (matrix-fractional). Its partial derivatives are −E_c, the observed
// adjoint energy of the optimal terminal data in cell c.
//
// The game value on the ½N scale:
//   U⁺ = inf_θ ½N(θ),
//   U⁻ = −min_η [½ max_{θ∈Θ} Σ θ_c E_c(η) + <r, η>].

#include <cstdint>
#include <string>
#include <vector>

#include "stochctl/density.hpp"
#include "stochctl/hum.hpp"

namespace stochctl {

/// Euclidean projection onto Θ: θ_c = clip(raw_c − μ vol_c, 0, 1) with μ
/// found by bisection.
ActuatorDensity project_onto_theta(const Vector& raw, double alpha, const CellGrid& grid);

struct KnapsackResult {
  ActuatorDensity theta;
  double value = 0.0;  ///< Σ θ_c E_c
  double level = 0.0;  ///< energy per unit volume at the threshold
};

/// Continuous knapsack max Σ θ_c E_c over Θ. Cells are filled in decreasing
/// order of E_c / vol_c; cells tied at the threshold (relative 1e-12) share
/// the remaining mass in proportion to their volume.
KnapsackResult knapsack_max(const Vector& energies, double alpha, const CellGrid& grid);

class PlacementProblem {
 public:
  /// Assembles the per-cell Gram matrices densely; needs C·n² doubles where
  /// n = J·2^K, and throws InvalidConfig beyond 2^26 of them.
  PlacementProblem(Model model, CellGrid grid, const TimeWindow& window, Vector y0,
                   double alpha);

  const Model& model() const { return model_; }
  const CellGrid& grid() const { return grid_; }
  const TimeWindow& window() const { return window_; }
  const Vector& y0() const { return y0_; }
  double alpha() const { return alpha_; }
  int cells() const { return grid_.size(); }
  Eigen::Index dim() const { return model_.terminal_dim(); }
  const std::vector<Matrix>& cell_grams() const { return grams_; }
  /// Free terminal state r as a flat leaf-major vector.
  const Vector& load() const { return load_; }
  /// Expectation weight 2^{-K} of one leaf.
  double leaf_weight() const { return leaf_weight_; }

  /// Dense G_θ in leaf-major coordinates.
  Matrix gram(const Vector& theta) const;
  /// E_c(η) = <G_c η, η> for every cell (η flat).
  Vector energies(const Vector& eta) const;

  struct Evaluation {
    double N = 0.0;
    Vector energies;  ///< E_c at the optimal η*; the gradient is −energies
    Vector eta;       ///< optimal terminal data (flat)
    double el_residual = 0.0;
  };
  /// Solves G_θ η* = −r by Cholesky. Throws DegenerateObservation when G_θ is
  /// not positive definite.
  Evaluation evaluate(const Vector& theta) const;

 private:
  Model model_;
  CellGrid grid_;
  TimeWindow window_;
  Vector y0_;
  double alpha_;
  std::vector<Matrix> grams_;   // Γ_c
  std::vector<Matrix> cell_ops_;  // G_c
  Vector load_;
  double leaf_weight_ = 1.0;
};

enum class PlacementMethod { ProjectedGradient, FrankWolfe };

const char* to_string(PlacementMethod m);
PlacementMethod parse_method(const std::string& name);

struct OptimizeOptions {
  PlacementMethod method = PlacementMethod::ProjectedGradient;
  int max_iter = 500;
  /// Stops when the projected-gradient step (or the Frank–Wolfe gap,
  /// relative to N) falls below tol.
  double tol = 1e-10;
  /// Starting density; uniform α when empty.
  Vector initial;
};

struct OptimizeResult {
  ActuatorDensity theta;
  double N = 0.0;
  Vector energies;
  Vector eta;
  std::vector<double> history;  ///< N at each accepted iterate
  int iterations = 0;
  bool converged = false;
  double stationarity = 0.0;
  /// Set when an inner solve failed; the result then holds the last
  /// consistent iterate.
  bool inner_failure = false;
  std::string failure;
};

/// Minimises N over Θ. An inner failure at the starting density throws;
/// later failures stop the run and are reported through inner_failure.
OptimizeResult optimize_actuator(const PlacementProblem& problem, const OptimizeOptions& options);

struct GameValue {
  double u_plus = 0.0;
  double u_minus = 0.0;
  double gap = 0.0;
  bool converged = false;
  int newton_steps = 0;
  std::vector<double> log;  ///< barrier objective after each centering
};

/// u_plus = ½N(θ*); u_minus from an interior-point solve of the η-side
/// problem, reported as −Φ(η) at the final (feasible) iterate so that it
/// never exceeds the true sup-inf value.
GameValue minimax_gap(const PlacementProblem& problem, const OptimizeResult& result,
                      double tol = 1e-11);

struct NashReport {
  ActuatorDensity theta_star;
  Vector energy_per_cell;
  double level = 0.0;
  double knapsack_value = 0.0;
  double value_gap = 0.0;           ///< knapsack optimum − Σ θ*_c E_c
  double structure_violation = 0.0; ///< measure of off-band cells
  double el_residual = 0.0;
  double hum_cost = 0.0;            ///< N recomputed by the HUM solver at θ*
  int swap_probes = 0;
  int swap_decreases = 0;
  bool value_ok = false;
  bool structure_ok = false;
  bool el_ok = false;
  bool swaps_ok = false;
  bool passed = false;
};

/// Checks both saddle conditions at θ*: the knapsack optimality of θ* for the
/// energies of φ*, and stationarity of the inner HUM problem. Mass-swap
/// probes move mass from a cell with θ > tol to one with θ < 1 − tol (never
/// between two fractional cells) and count strict decreases of Σ θ_c E_c;
/// the probe check holds vacuously when no such pair exists.
NashReport check_nash(const PlacementProblem& problem, const ActuatorDensity& theta_star,
                      double tol, int probes = 100, std::uint64_t seed = 7);

}  // namespace stochctl
