#pragma once

// Binary-tree model of the Brownian filtration on [0, T].
//
// Node (k, p) sits at time t_k = k·dt; its children are (k+1, 2p) reached by
// the increment +√dt and (k+1, 2p+1) reached by −√dt, each with probability
// ½. Every node at level k therefore has probability 2^{-k}.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stochctl/spectral.hpp"

namespace stochctl {

class FiltrationTree {
 public:
  FiltrationTree() = default;
  FiltrationTree(int steps, double horizon);

  int steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double dt() const { return horizon_ / steps_; }
  double sqrt_dt() const { return sqrt_dt_; }
  double time(int k) const { return k * dt(); }

  static std::int64_t nodes_at(int k) { return std::int64_t{1} << k; }
  std::int64_t leaves() const { return nodes_at(steps_); }
  double probability(int k) const { return 1.0 / static_cast<double>(nodes_at(k)); }

  /// ΔW on the branch into node (k+1, child): +√dt for even, −√dt for odd.
  double increment(std::int64_t child) const { return (child & 1) ? -sqrt_dt_ : sqrt_dt_; }

  /// Accumulated Brownian path W(t_k) at node (k, p).
  double brownian(int k, std::int64_t p) const;

 private:
  int steps_ = 0;
  double horizon_ = 0.0;
  double sqrt_dt_ = 0.0;
};

/// Per-node modal vectors for levels 0..depth; level k is stored as a
/// J × 2^k matrix whose column p is the value at node (k, p). Adaptedness is
/// structural: a node value can only depend on the path that reaches it.
class AdaptedField {
 public:
  AdaptedField() = default;
  AdaptedField(int modes, int depth);

  int modes() const { return modes_; }
  int depth() const { return static_cast<int>(levels_.size()) - 1; }

  Matrix& level(int k) { return levels_[k]; }
  const Matrix& level(int k) const { return levels_[k]; }

  AdaptedField& operator+=(const AdaptedField& other);
  AdaptedField& operator*=(double c);

  /// Σ_nodes prob·‖value‖² over all levels.
  double second_moment() const;

 private:
  int modes_ = 0;
  std::vector<Matrix> levels_;
};

AdaptedField operator+(AdaptedField a, const AdaptedField& b);
AdaptedField operator*(double c, AdaptedField a);

/// η ∈ L²(Ω, F_T; L²(D)): J × 2^K, column per leaf.
using TerminalData = Matrix;

/// Deterministic, per-step constant coefficient a(t) = a_k on [t_k, t_{k+1}).
class NoiseCoefficient {
 public:
  NoiseCoefficient() = default;
  explicit NoiseCoefficient(std::vector<double> values);
  static NoiseCoefficient constant(int steps, double a);

  int steps() const { return static_cast<int>(values_.size()); }
  double operator[](int k) const { return values_[k]; }
  const std::vector<double>& values() const { return values_; }
  /// τ = max_k a_k².
  double tau() const;

 private:
  std::vector<double> values_;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Finite union of disjoint subintervals of [0, T].
class TimeWindow {
 public:
  TimeWindow() = default;
  TimeWindow(std::vector<Interval> intervals, double horizon);
  static TimeWindow full(double horizon);

  const std::vector<Interval>& intervals() const { return intervals_; }
  double measure() const { return measure_; }
  bool contains(double t) const;
  /// χ_E(t_k) for the left endpoint of every step k = 0..K-1.
  std::vector<double> mask(const FiltrationTree& tree) const;

 private:
  std::vector<Interval> intervals_;
  double measure_ = 0.0;
};

/// Conditional expectation of the deepest level of `field` onto levels
/// 0..level. Each node value is the probability-weighted average of its
/// descendants in the deepest level.
AdaptedField conditional_expectation(const AdaptedField& field, int level);

/// Same operation for terminal data viewed as the deepest level.
AdaptedField conditional_expectation(const TerminalData& leaves, int level);

/// E vᵀ·gram·v at `level`.
double expected_norm_sq(const AdaptedField& field, int level, const Matrix& gram);
double expected_norm_sq(const Matrix& level_values, const Matrix& gram);

/// The same quantity with the identity Gram matrix.
double expected_sq(const Matrix& level_values);

/// E(a, b) for two level matrices of identical shape.
double expected_dot(const Matrix& a, const Matrix& b);

struct TerminalSpec {
  enum class Kind { Deterministic, Gaussian, BrownianMode };
  Kind kind = Kind::Deterministic;
  Vector vector;       ///< Deterministic: value at every leaf.
  double sigma = 1.0;  ///< Gaussian: per-mode standard deviation.
  int mode = 0;        ///< BrownianMode: η = W_T · e_mode.

  static TerminalSpec parse(const std::string& name);
};

/// Reproducible terminal data. Gaussian draws come from std::mt19937_64
/// seeded with `seed` and are consumed leaf by leaf, mode by mode.
TerminalData sample_terminal(std::uint64_t seed, const TerminalSpec& spec,
                             const FiltrationTree& tree, int modes);

/// Debug dump: one row per node "level,path,c_1,...,c_J".
void write_field_csv(std::ostream& out, const AdaptedField& field);

}  // namespace stochctl
