#include "stochctl/stochastic_grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <random>

#include "stochctl/error.hpp"

namespace stochctl {

FiltrationTree::FiltrationTree(int steps, double horizon)
    : steps_(steps), horizon_(horizon) {
  require(steps >= 1 && steps <= 20, ErrorKind::InvalidConfig, "tree steps must be in 1..20");
  require(std::isfinite(horizon) && horizon > 0.0, ErrorKind::InvalidConfig,
          "horizon must be positive");
  sqrt_dt_ = std::sqrt(dt());
}

double FiltrationTree::brownian(int k, std::int64_t p) const {
  const int down = std::popcount(static_cast<std::uint64_t>(p));
  return sqrt_dt_ * static_cast<double>(k - 2 * down);
}

AdaptedField::AdaptedField(int modes, int depth) : modes_(modes) {
  levels_.reserve(depth + 1);
  for (int k = 0; k <= depth; ++k) {
    levels_.push_back(Matrix::Zero(modes, FiltrationTree::nodes_at(k)));
  }
}

AdaptedField& AdaptedField::operator+=(const AdaptedField& other) {
  require(other.modes_ == modes_ && other.depth() == depth(), ErrorKind::InvalidConfig,
          "adapted field shapes differ");
  for (std::size_t k = 0; k < levels_.size(); ++k) levels_[k] += other.levels_[k];
  return *this;
}

AdaptedField& AdaptedField::operator*=(double c) {
  for (Matrix& m : levels_) m *= c;
  return *this;
}

double AdaptedField::second_moment() const {
  double s = 0.0;
  for (const Matrix& m : levels_) s += expected_sq(m);
  return s;
}

AdaptedField operator+(AdaptedField a, const AdaptedField& b) { return a += b; }
AdaptedField operator*(double c, AdaptedField a) { return a *= c; }

NoiseCoefficient::NoiseCoefficient(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    require(std::isfinite(v), ErrorKind::InvalidConfig, "noise coefficient must be finite");
  }
}

NoiseCoefficient NoiseCoefficient::constant(int steps, double a) {
  return NoiseCoefficient(std::vector<double>(steps, a));
}

double NoiseCoefficient::tau() const {
  double t = 0.0;
  for (double v : values_) t = std::max(t, v * v);
  return t;
}

TimeWindow::TimeWindow(std::vector<Interval> intervals, double horizon)
    : intervals_(std::move(intervals)) {
  require(!intervals_.empty(), ErrorKind::InvalidConfig, "time window is empty");
  std::sort(intervals_.begin(), intervals_.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    const Interval& iv = intervals_[i];
    require(iv.lo >= 0.0 && iv.hi <= horizon * (1 + 1e-12) && iv.lo < iv.hi,
            ErrorKind::InvalidConfig, "time window interval must lie in [0, T]");
    if (i > 0) {
      require(intervals_[i - 1].hi <= iv.lo, ErrorKind::InvalidConfig,
              "time window intervals overlap");
    }
    measure_ += iv.hi - iv.lo;
  }
}

TimeWindow TimeWindow::full(double horizon) { return TimeWindow({{0.0, horizon}}, horizon); }

bool TimeWindow::contains(double t) const {
  for (const Interval& iv : intervals_) {
    if (t >= iv.lo && t < iv.hi) return true;
  }
  return false;
}

std::vector<double> TimeWindow::mask(const FiltrationTree& tree) const {
  std::vector<double> m(tree.steps());
  // Grid times are compared with a small slack so that t_k = k·dt lands on
  // the intended side of an interval endpoint given exactly in decimal.
  const double slack = 1e-12 * tree.horizon();
  for (int k = 0; k < tree.steps(); ++k) m[k] = contains(tree.time(k) + slack) ? 1.0 : 0.0;
  return m;
}

namespace {

Matrix average_down(const Matrix& children) {
  const auto n = children.cols() / 2;
  Matrix parent(children.rows(), n);
  for (Eigen::Index p = 0; p < n; ++p) {
    parent.col(p) = 0.5 * (children.col(2 * p) + children.col(2 * p + 1));
  }
  return parent;
}

}  // namespace

AdaptedField conditional_expectation(const TerminalData& leaves, int level) {
  const auto cols = leaves.cols();
  require(cols >= 1 && std::has_single_bit(static_cast<std::uint64_t>(cols)),
          ErrorKind::InvalidConfig, "leaf count must be a power of two");
  const int depth = std::countr_zero(static_cast<std::uint64_t>(cols));
  require(level >= 0 && level <= depth, ErrorKind::InvalidConfig,
          "conditional expectation level exceeds the field depth");
  AdaptedField out(static_cast<int>(leaves.rows()), level);
  Matrix current = leaves;
  for (int k = depth; k > level; --k) current = average_down(current);
  out.level(level) = current;
  for (int k = level; k > 0; --k) out.level(k - 1) = average_down(out.level(k));
  return out;
}

AdaptedField conditional_expectation(const AdaptedField& field, int level) {
  return conditional_expectation(field.level(field.depth()), level);
}

double expected_norm_sq(const Matrix& level_values, const Matrix& gram) {
  require(gram.rows() == level_values.rows() && gram.cols() == level_values.rows(),
          ErrorKind::InvalidConfig, "Gram dimension does not match the field");
  const double prob = 1.0 / static_cast<double>(level_values.cols());
  return prob * (level_values.cwiseProduct(gram * level_values)).sum();
}

double expected_norm_sq(const AdaptedField& field, int level, const Matrix& gram) {
  require(level >= 0 && level <= field.depth(), ErrorKind::InvalidConfig,
          "level exceeds the field depth");
  return expected_norm_sq(field.level(level), gram);
}

double expected_sq(const Matrix& level_values) {
  return level_values.squaredNorm() / static_cast<double>(level_values.cols());
}

double expected_dot(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).sum() / static_cast<double>(a.cols());
}

TerminalSpec TerminalSpec::parse(const std::string& name) {
  TerminalSpec spec;
  if (name == "deterministic") {
    spec.kind = Kind::Deterministic;
  } else if (name == "gaussian") {
    spec.kind = Kind::Gaussian;
  } else if (name == "brownian_mode") {
    spec.kind = Kind::BrownianMode;
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown terminal distribution '" + name + "'");
  }
  return spec;
}

TerminalData sample_terminal(std::uint64_t seed, const TerminalSpec& spec,
                             const FiltrationTree& tree, int modes) {
  const auto leaves = tree.leaves();
  TerminalData eta = TerminalData::Zero(modes, leaves);
  switch (spec.kind) {
    case TerminalSpec::Kind::Deterministic:
      require(spec.vector.size() == modes, ErrorKind::InvalidConfig,
              "deterministic terminal vector has the wrong length");
      eta.colwise() = spec.vector;
      break;
    case TerminalSpec::Kind::Gaussian: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, spec.sigma);
      for (Eigen::Index p = 0; p < leaves; ++p) {
        for (int j = 0; j < modes; ++j) eta(j, p) = normal(rng);
      }
      break;
    }
    case TerminalSpec::Kind::BrownianMode:
      require(spec.mode >= 0 && spec.mode < modes, ErrorKind::InvalidConfig,
              "terminal mode index out of range");
      for (Eigen::Index p = 0; p < leaves; ++p) {
        eta(spec.mode, p) = tree.brownian(tree.steps(), p);
      }
      break;
  }
  return eta;
}

void write_field_csv(std::ostream& out, const AdaptedField& field) {
  out << "level,path";
  for (int j = 0; j < field.modes(); ++j) out << ",c" << j + 1;
  out << '\n';
  out.precision(17);
  for (int k = 0; k <= field.depth(); ++k) {
    const Matrix& m = field.level(k);
    for (Eigen::Index p = 0; p < m.cols(); ++p) {
      out << k << ',' << p;
      for (int j = 0; j < field.modes(); ++j) out << ',' << m(j, p);
      out << '\n';
    }
  }
}

}  // namespace stochctl
