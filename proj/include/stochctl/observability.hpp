#pragma once

// Observability estimates for the backward adjoint: high-frequency decay,
// the interpolation constant K̃, the L² and L¹-in-time observability
// constants, the telescoping sequence and the level-set bound for densities.

#include <cstdint>
#include <vector>

#include "stochctl/density.hpp"
#include "stochctl/hum.hpp"

namespace stochctl {

struct DecayCheck {
  double margin = 0.0;     ///< min_k (bound_k − E‖z_k‖²); ≥ 0 when the estimate holds
  int worst_level = 0;
  int violations = 0;      ///< levels with a negative margin beyond round-off
};

/// Adjoint with terminal data E⊥_λ η (modes with eigenvalue ≤ cutoff removed)
/// against e^{(−2λ+τ)(T−t_k)} E‖η‖² at every level.
DecayCheck check_decay(const TerminalData& eta, double cutoff, const Model& model);

struct InterpolationResult {
  double k_star = 0.0;  ///< smallest K̃ ≥ 0 with ratio ≤ K̃ e^{K̃/(T−t)}
  double ratio = 0.0;   ///< E‖z(t)‖² / ((E‖z(t)‖²_G)^{1/2} (E‖η‖²)^{1/2})
  double s = 0.0;       ///< T − t
};

/// Throws DegenerateObservation when z(t) ≠ 0 but its observed part vanishes.
InterpolationResult check_interpolation(const TerminalData& eta, const Matrix& region_gram,
                                        int t_index, const Model& model);

struct L2Constant {
  double constant = 0.0;  ///< sup ‖z(0)‖² / <G η, η>
  int iterations = 0;
  int inner_iterations = 0;
  bool converged = false;
  Vector top_direction;   ///< maximising z(0) direction in R^J
};

/// Power iteration on S G^{-1} S* (S: η ↦ z(0)) with CG inner solves.
/// Throws DegenerateObservation if an inner solve fails, which signals a
/// singular Gram operator; the error value is the deficiency dimension when
/// the operator is small enough to factor densely, and −1 otherwise.
L2Constant l2_observability_constant(const GramOperator& op, double tol, int max_iter = 2000);

/// Number of eigenvalues of the dense Gram matrix below 1e-12 times the
/// largest one.
int gram_deficiency(const GramOperator& op);

struct L1Options {
  int restarts = 8;
  int iterations = 200;
  std::uint64_t seed = 1;
  /// Extra starting points (for example the power-iteration maximiser).
  std::vector<TerminalData> candidates;
};

struct L1Constant {
  double lower_bound = 0.0;  ///< best ‖z(0)‖² / (Σ dt χ (E‖z_k‖²_W)^{1/2})² found
  TerminalData argmax;
  int evaluations = 0;
  int discarded = 0;         ///< starts whose observation vanished
};

/// Ratio of one candidate; +∞ if the observation vanishes with z(0) ≠ 0.
double l1_ratio(const TerminalData& eta, const GramOperator& op);

/// Multi-start projected-gradient ascent on the unit sphere. The result is a
/// certified lower bound for the true supremum.
L1Constant l1_observability_constant(const GramOperator& op, const L1Options& options);

struct TelescopingSequence {
  double anchor = 0.0;
  double start = 0.0;
  double contraction = 0.0;  ///< q = (C + ½)/(C + 1)
  std::vector<double> l;     ///< ℓ_1 > ℓ_2 > ... → anchor
  std::vector<double> tau;   ///< τ_m = ℓ_{m+1} + (ℓ_m − ℓ_{m+1})/6
};

/// ℓ_m = anchor + (start − anchor) q^{m−1}, m = 1..count (count ≥ 2).
/// Requires anchor < start < horizon and C > 0.
TelescopingSequence build_telescoping(double anchor, double start, double C, int count,
                                      double horizon);

struct TelescopingCheck {
  bool ordered = true;         ///< ℓ_{m+1} < τ_m < ℓ_m
  bool gaps_ok = true;         ///< ℓ_m − τ_m = 5(ℓ_m − ℓ_{m+1})/6
  bool window_density_ok = true;
  double max_gap_error = 0.0;
  double min_density_ratio = 0.0;  ///< min_m |E ∩ (ℓ_{m+1}, ℓ_m)| / (ℓ_m − ℓ_{m+1})
};

/// Checks the sequence and, when `density_window` is non-null, the measure
/// lower bound |E ∩ (ℓ_{m+1}, ℓ_m)| ≥ ρ (ℓ_m − ℓ_{m+1}).
TelescopingCheck check_telescoping(const TelescopingSequence& seq,
                                   const TimeWindow* density_window, double rho);

struct LevelSetBound {
  double level = 0.0;    ///< (α/2)^{1/2}
  double measure = 0.0;  ///< |{β ≥ level}|
  double bound = 0.0;    ///< α|D|/(2 − α)
  bool holds = false;
};

/// For β with 0 ≤ β ≤ 1 and ∫β² = α|D|.
LevelSetBound level_set_bound(const CellGrid& grid, const Vector& beta, double alpha);

}  // namespace stochctl
