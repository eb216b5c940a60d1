#pragma once

// Cellwise actuator densities θ ∈ Θ = {0 ≤ θ ≤ 1, ∫θ = α|D|} on a uniform
// cell partition of the domain, and their multiplier matrices.

#include <vector>

#include "stochctl/spectral.hpp"

namespace stochctl {

class CellGrid {
 public:
  CellGrid() = default;
  /// `counts[d]` cells along axis d (only the first domain.dims entries used).
  CellGrid(const BoxDomain& domain, std::array<int, 2> counts);

  const BoxDomain& domain() const { return domain_; }
  int size() const { return static_cast<int>(cells_.size()); }
  const std::array<int, 2>& counts() const { return counts_; }
  const Box& cell(int c) const { return cells_[c]; }
  const Vector& volumes() const { return volumes_; }
  std::array<double, 2> center(int c) const;

  /// Index of the cell mirrored through the domain midpoint along `axis`.
  int mirror(int c, int axis) const;

 private:
  BoxDomain domain_;
  std::array<int, 2> counts_{1, 1};
  std::vector<Box> cells_;
  Vector volumes_;
};

/// Γ_c = ∫_cell e_i e_j dx for every cell; Σ_c Γ_c is the identity.
std::vector<Matrix> cell_grams(const SpectralBasis& basis, const CellGrid& grid);

class ActuatorDensity {
 public:
  ActuatorDensity() = default;
  /// Validates 0 ≤ θ ≤ 1 and Σ θ_c vol_c = α|D| (to 1e-10·|D|).
  ActuatorDensity(CellGrid grid, Vector theta, double alpha);

  static ActuatorDensity uniform(const CellGrid& grid, double alpha);

  const CellGrid& grid() const { return grid_; }
  const Vector& theta() const { return theta_; }
  double alpha() const { return alpha_; }
  Vector beta() const { return theta_.cwiseSqrt(); }
  double mass() const { return theta_.dot(grid_.volumes()); }

  /// B_θ = Σ_c θ_c Γ_c = ((β e_i, β e_j)).
  Matrix multiplier(const std::vector<Matrix>& grams) const;

 private:
  CellGrid grid_;
  Vector theta_;
  double alpha_ = 0.0;
};

/// Mass budget check shared by the projection and the knapsack.
void validate_budget(double alpha);

}  // namespace stochctl
