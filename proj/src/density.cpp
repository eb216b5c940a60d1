#include "stochctl/density.hpp"

#include <cmath>

#include "stochctl/error.hpp"

namespace stochctl {

CellGrid::CellGrid(const BoxDomain& domain, std::array<int, 2> counts)
    : domain_(domain), counts_(counts) {
  domain.validate();
  if (domain.dims == 1) counts_[1] = 1;
  for (int d = 0; d < domain.dims; ++d) {
    require(counts_[d] >= 1, ErrorKind::InvalidConfig, "cell counts must be positive");
  }
  const double hx = domain.lengths[0] / counts_[0];
  const double hy = domain.dims == 2 ? domain.lengths[1] / counts_[1] : 0.0;
  for (int iy = 0; iy < counts_[1]; ++iy) {
    for (int ix = 0; ix < counts_[0]; ++ix) {
      Box b;
      b.lo[0] = ix * hx;
      b.hi[0] = ix + 1 == counts_[0] ? domain.lengths[0] : (ix + 1) * hx;
      if (domain.dims == 2) {
        b.lo[1] = iy * hy;
        b.hi[1] = iy + 1 == counts_[1] ? domain.lengths[1] : (iy + 1) * hy;
      }
      cells_.push_back(b);
    }
  }
  volumes_.resize(size());
  // Uniform partition: every cell carries exactly |D| / C.
  volumes_.setConstant(domain.volume() / size());
}

std::array<double, 2> CellGrid::center(int c) const {
  const Box& b = cells_[c];
  return {0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1])};
}

int CellGrid::mirror(int c, int axis) const {
  int ix = c % counts_[0];
  int iy = c / counts_[0];
  if (axis == 0) {
    ix = counts_[0] - 1 - ix;
  } else {
    iy = counts_[1] - 1 - iy;
  }
  return iy * counts_[0] + ix;
}

std::vector<Matrix> cell_grams(const SpectralBasis& basis, const CellGrid& grid) {
  require(basis.domain().dims == grid.domain().dims, ErrorKind::InvalidConfig,
          "cell grid and basis live on different domains");
  std::vector<Matrix> out;
  out.reserve(grid.size());
  for (int c = 0; c < grid.size(); ++c) out.push_back(box_gram(basis, grid.cell(c)));
  return out;
}

void validate_budget(double alpha) {
  require(std::isfinite(alpha) && alpha > 0.0 && alpha <= 1.0, ErrorKind::InvalidBudget,
          "budget fraction alpha must lie in (0, 1]");
}

ActuatorDensity::ActuatorDensity(CellGrid grid, Vector theta, double alpha)
    : grid_(std::move(grid)), theta_(std::move(theta)), alpha_(alpha) {
  validate_budget(alpha);
  require(theta_.size() == grid_.size(), ErrorKind::InvalidDensity,
          "density has the wrong number of cells");
  for (Eigen::Index c = 0; c < theta_.size(); ++c) {
    require(theta_(c) >= 0.0 && theta_(c) <= 1.0, ErrorKind::InvalidDensity,
            "density values must lie in [0, 1]");
  }
  const double dom = grid_.domain().volume();
  require(std::abs(mass() - alpha * dom) <= 1e-10 * dom, ErrorKind::InvalidDensity,
          "density violates the mass budget");
}

ActuatorDensity ActuatorDensity::uniform(const CellGrid& grid, double alpha) {
  return ActuatorDensity(grid, Vector::Constant(grid.size(), alpha), alpha);
}

Matrix ActuatorDensity::multiplier(const std::vector<Matrix>& grams) const {
  require(static_cast<int>(grams.size()) == grid_.size(), ErrorKind::InvalidConfig,
          "cell Gram list does not match the grid");
  Matrix b = Matrix::Zero(grams.front().rows(), grams.front().cols());
  for (int c = 0; c < grid_.size(); ++c) {
    if (theta_(c) != 0.0) b += theta_(c) * grams[c];
  }
  return b;
}

}  // namespace stochctl
