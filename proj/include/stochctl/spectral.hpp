#pragma once

// Dirichlet eigenbasis of the Laplacian on 1D/2D boxes, exact Gram matrices
// over unions of axis-aligned boxes, and the spectral-inequality estimator.

#include <array>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace stochctl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct BoxDomain {
  int dims = 1;
  std::array<double, 2> lengths{1.0, 1.0};

  double volume() const;
  void validate() const;
};

/// Axis-aligned box [lo, hi] (only the first `dims` entries are used).
struct Box {
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{0.0, 0.0};

  double volume(int dims) const;
};

class Region {
 public:
  Region() = default;
  /// Validates containment in `domain`, positive volume and pairwise
  /// disjointness (overlaps of measure zero are allowed).
  Region(const BoxDomain& domain, std::vector<Box> boxes);

  static Region full(const BoxDomain& domain);

  const std::vector<Box>& boxes() const { return boxes_; }
  double measure() const { return measure_; }
  int dims() const { return dims_; }

 private:
  std::vector<Box> boxes_;
  double measure_ = 0.0;
  int dims_ = 1;
};

using MultiIndex = std::array<int, 2>;

class SpectralBasis {
 public:
  SpectralBasis() = default;

  const BoxDomain& domain() const { return domain_; }
  int size() const { return static_cast<int>(modes_.size()); }
  const std::vector<MultiIndex>& modes() const { return modes_; }
  const Vector& eigenvalues() const { return eigenvalues_; }
  double eigenvalue(int j) const { return eigenvalues_(j); }

  /// e_j(x) = prod_i sqrt(2/L_i) sin(j_i pi x_i / L_i).
  double eigenfunction(int j, const std::array<double, 2>& x) const;

  friend SpectralBasis build_basis(const BoxDomain& domain, int mode_count);

 private:
  BoxDomain domain_;
  std::vector<MultiIndex> modes_;
  Vector eigenvalues_;
};

/// The `mode_count` smallest Dirichlet eigenpairs, sorted by eigenvalue with
/// ties broken by lexicographic multi-index order.
SpectralBasis build_basis(const BoxDomain& domain, int mode_count);

/// Exact ∫_box e_i e_j dx for every pair of modes.
Matrix box_gram(const SpectralBasis& basis, const Box& box);

/// Exact ∫_region e_i e_j dx (sum of box Grams).
Matrix gram(const SpectralBasis& basis, const Region& region);

struct SpectralSplit {
  Vector low;
  Vector high;
};

/// ℰ_λ and its complement in modal coordinates; low + high == coeffs exactly.
SpectralSplit spectral_project(const Vector& coeffs, const SpectralBasis& basis,
                               double cutoff);

/// Number of modes with λ_j ≤ cutoff.
int modes_below(const SpectralBasis& basis, double cutoff);

/// sup ‖ℰ_λη‖² / ‖ℰ_λη‖²_G = 1 / μ_min of the Gram matrix restricted to the
/// modes below `cutoff`. Throws DegenerateObservation carrying μ_min when the
/// restricted Gram matrix is numerically singular.
double spectral_inequality_constant(const SpectralBasis& basis, const Region& region,
                                    double cutoff);

struct SpectralGrowth {
  std::vector<double> cutoffs;
  std::vector<double> ratios;
  /// max over the grid of log(ratio) / sqrt(λ).
  double max_log_ratio_over_sqrt = 0.0;
};

/// Evaluates the spectral-inequality constant at every distinct eigenvalue of
/// the basis and reports the growth exponent log(ratio)/√λ.
SpectralGrowth spectral_growth(const SpectralBasis& basis, const Region& region);

/// CSV export: header row of multi-indices, then the matrix row-major.
void write_gram_csv(std::ostream& out, const SpectralBasis& basis, const Matrix& g);

}  // namespace stochctl
