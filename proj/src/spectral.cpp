#include "stochctl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "stochctl/error.hpp"

namespace stochctl {

namespace {

constexpr double kPi = std::numbers::pi;

// ∫_a^b (2/L) sin(iπx/L) sin(jπx/L) dx from the closed-form antiderivative.
double sine_product_integral(int i, int j, double a, double b, double length) {
  if (i == j) {
    const double w = 2.0 * i * kPi / length;
    return (b - a) / length - (std::sin(w * b) - std::sin(w * a)) / (2.0 * i * kPi);
  }
  const double dm = i - j;
  const double dp = i + j;
  auto antiderivative = [&](double x) {
    return std::sin(dm * kPi * x / length) / dm - std::sin(dp * kPi * x / length) / dp;
  };
  return (antiderivative(b) - antiderivative(a)) / kPi;
}

double overlap_volume(const Box& a, const Box& b, int dims) {
  double v = 1.0;
  for (int d = 0; d < dims; ++d) {
    const double lo = std::max(a.lo[d], b.lo[d]);
    const double hi = std::min(a.hi[d], b.hi[d]);
    if (hi <= lo) return 0.0;
    v *= hi - lo;
  }
  return v;
}

bool eigen_less(double la, const MultiIndex& ma, double lb, const MultiIndex& mb) {
  const double scale = std::max(std::abs(la), std::abs(lb));
  if (std::abs(la - lb) > 1e-12 * scale) return la < lb;
  return ma < mb;
}

}  // namespace

double BoxDomain::volume() const {
  double v = 1.0;
  for (int d = 0; d < dims; ++d) v *= lengths[d];
  return v;
}

void BoxDomain::validate() const {
  require(dims == 1 || dims == 2, ErrorKind::InvalidConfig, "domain dims must be 1 or 2");
  for (int d = 0; d < dims; ++d) {
    require(std::isfinite(lengths[d]) && lengths[d] > 0.0, ErrorKind::InvalidConfig,
            "domain lengths must be positive");
  }
}

double Box::volume(int dims) const {
  double v = 1.0;
  for (int d = 0; d < dims; ++d) v *= hi[d] - lo[d];
  return v;
}

Region::Region(const BoxDomain& domain, std::vector<Box> boxes)
    : boxes_(std::move(boxes)), dims_(domain.dims) {
  domain.validate();
  require(!boxes_.empty(), ErrorKind::InvalidRegion, "region has no boxes");
  const double tol = 1e-12 * domain.volume();
  for (const Box& b : boxes_) {
    for (int d = 0; d < dims_; ++d) {
      const double slack = 1e-12 * domain.lengths[d];
      require(b.lo[d] < b.hi[d], ErrorKind::InvalidRegion, "region box has empty extent");
      require(b.lo[d] >= -slack && b.hi[d] <= domain.lengths[d] + slack,
              ErrorKind::InvalidRegion, "region box lies outside the domain");
    }
    measure_ += b.volume(dims_);
  }
  for (std::size_t i = 0; i < boxes_.size(); ++i) {
    for (std::size_t k = i + 1; k < boxes_.size(); ++k) {
      require(overlap_volume(boxes_[i], boxes_[k], dims_) <= tol, ErrorKind::InvalidRegion,
              "region boxes overlap");
    }
  }
}

Region Region::full(const BoxDomain& domain) {
  Box b;
  for (int d = 0; d < domain.dims; ++d) b.hi[d] = domain.lengths[d];
  return Region(domain, {b});
}

double SpectralBasis::eigenfunction(int j, const std::array<double, 2>& x) const {
  double v = 1.0;
  for (int d = 0; d < domain_.dims; ++d) {
    const double len = domain_.lengths[d];
    v *= std::sqrt(2.0 / len) * std::sin(modes_[j][d] * kPi * x[d] / len);
  }
  return v;
}

SpectralBasis build_basis(const BoxDomain& domain, int mode_count) {
  domain.validate();
  require(mode_count >= 1, ErrorKind::InvalidConfig, "mode count must be at least 1");

  // Index bound J per axis always contains the J smallest eigenvalues: the
  // modes (1,1)..(J,1) already give J candidates below any excluded mode.
  const int bound = mode_count;
  struct Candidate {
    double lambda;
    MultiIndex index;
  };
  std::vector<Candidate> candidates;
  auto lambda_of = [&](const MultiIndex& m) {
    double l = 0.0;
    for (int d = 0; d < domain.dims; ++d) {
      const double k = m[d] * kPi / domain.lengths[d];
      l += k * k;
    }
    return l;
  };
  if (domain.dims == 1) {
    for (int i = 1; i <= bound; ++i) candidates.push_back({lambda_of({i, 0}), {i, 0}});
  } else {
    for (int i = 1; i <= bound; ++i) {
      for (int k = 1; k <= bound; ++k) candidates.push_back({lambda_of({i, k}), {i, k}});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return eigen_less(a.lambda, a.index, b.lambda, b.index);
  });

  // Smallest eigenvalue excluded by the enumeration bound.
  double excluded = 0.0;
  {
    double best = std::numeric_limits<double>::infinity();
    for (int d = 0; d < domain.dims; ++d) {
      MultiIndex m{1, 1};
      if (domain.dims == 1) m[1] = 0;
      m[d] = bound + 1;
      best = std::min(best, lambda_of(m));
    }
    excluded = best;
  }
  require(candidates[mode_count - 1].lambda <= excluded, ErrorKind::InternalConsistency,
          "mode enumeration bound insufficient");

  SpectralBasis basis;
  basis.domain_ = domain;
  basis.eigenvalues_.resize(mode_count);
  for (int j = 0; j < mode_count; ++j) {
    basis.modes_.push_back(candidates[j].index);
    basis.eigenvalues_(j) = candidates[j].lambda;
  }
  return basis;
}

Matrix box_gram(const SpectralBasis& basis, const Box& box) {
  const int n = basis.size();
  const BoxDomain& dom = basis.domain();
  Matrix g(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double v = 1.0;
      for (int d = 0; d < dom.dims; ++d) {
        v *= sine_product_integral(basis.modes()[i][d], basis.modes()[j][d], box.lo[d],
                                   box.hi[d], dom.lengths[d]);
      }
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

Matrix gram(const SpectralBasis& basis, const Region& region) {
  require(region.dims() == basis.domain().dims, ErrorKind::InvalidRegion,
          "region dimension does not match the basis domain");
  Matrix g = Matrix::Zero(basis.size(), basis.size());
  for (const Box& b : region.boxes()) g += box_gram(basis, b);
  return g;
}

int modes_below(const SpectralBasis& basis, double cutoff) {
  int n = 0;
  while (n < basis.size() && basis.eigenvalue(n) <= cutoff) ++n;
  return n;
}

SpectralSplit spectral_project(const Vector& coeffs, const SpectralBasis& basis,
                               double cutoff) {
  require(coeffs.size() == basis.size(), ErrorKind::InvalidConfig,
          "coefficient vector length does not match the basis");
  SpectralSplit out{Vector::Zero(coeffs.size()), Vector::Zero(coeffs.size())};
  for (int j = 0; j < coeffs.size(); ++j) {
    if (basis.eigenvalue(j) <= cutoff) {
      out.low(j) = coeffs(j);
    } else {
      out.high(j) = coeffs(j);
    }
  }
  return out;
}

double spectral_inequality_constant(const SpectralBasis& basis, const Region& region,
                                    double cutoff) {
  const int n = modes_below(basis, cutoff);
  require(n >= 1, ErrorKind::InvalidConfig, "no eigenvalue below the spectral cutoff");
  const Matrix g = gram(basis, region).topLeftCorner(n, n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
  const double mu_min = eig.eigenvalues()(0);
  if (!(mu_min > 1e-12 * std::max(1.0, eig.eigenvalues()(n - 1)))) {
    throw Error(ErrorKind::DegenerateObservation,
                "truncated Gram matrix is singular: region too small for the resolution",
                mu_min);
  }
  return 1.0 / mu_min;
}

SpectralGrowth spectral_growth(const SpectralBasis& basis, const Region& region) {
  SpectralGrowth out;
  for (int j = 0; j < basis.size(); ++j) {
    const double cutoff = basis.eigenvalue(j);
    if (!out.cutoffs.empty() && cutoff == out.cutoffs.back()) continue;
    const double ratio = spectral_inequality_constant(basis, region, cutoff);
    out.cutoffs.push_back(cutoff);
    out.ratios.push_back(ratio);
    out.max_log_ratio_over_sqrt =
        std::max(out.max_log_ratio_over_sqrt, std::log(ratio) / std::sqrt(cutoff));
  }
  return out;
}

void write_gram_csv(std::ostream& out, const SpectralBasis& basis, const Matrix& g) {
  const int n = basis.size();
  auto label = [&](int j) {
    const MultiIndex& m = basis.modes()[j];
    std::string s = "(" + std::to_string(m[0]);
    if (basis.domain().dims == 2) s += ";" + std::to_string(m[1]);
    return s + ")";
  };
  for (int j = 0; j < n; ++j) out << (j ? "," : "") << label(j);
  out << '\n';
  out.precision(17);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out << (j ? "," : "") << g(i, j);
    out << '\n';
  }
}

}  // namespace stochctl
