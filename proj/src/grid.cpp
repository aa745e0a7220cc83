#include "homlab/grid.hpp"

#include <cmath>
#include <numbers>

#include "homlab/util.hpp"

namespace hom {

Grid::Grid(int dim, Site sides, int R) : dim_(dim), R_(R) {
  if (dim < 1 || dim > 3) throw ParameterError("dimension must be 1, 2 or 3");
  if (R < 1) throw ParameterError("coarse cell size R must be >= 1");
  for (int a = 0; a < 3; ++a) {
    n_[a] = a < dim ? sides[a] : 1;
    if (n_[a] < 1) throw ParameterError("side lengths must be positive");
    if (a < dim && n_[a] % R != 0)
      throw ParameterError("side length " + std::to_string(n_[a]) + " not divisible by R=" +
                           std::to_string(R));
  }
  stride_[2] = 1;
  stride_[1] = static_cast<std::size_t>(n_[2]);
  stride_[0] = stride_[1] * static_cast<std::size_t>(n_[1]);
  size_ = stride_[0] * static_cast<std::size_t>(n_[0]);
}

Grid Grid::cube(int dim, int L, int R) { return Grid(dim, {L, L, L}, R); }

std::size_t Grid::index(const Site& c) const {
  std::size_t i = 0;
  for (int a = 0; a < 3; ++a) i += static_cast<std::size_t>(wrap(c[a], n_[a])) * stride_[a];
  return i;
}

Site Grid::coords(std::size_t i) const {
  Site c{};
  for (int a = 0; a < 3; ++a) {
    c[a] = static_cast<int>(i / stride_[a]);
    i %= stride_[a];
  }
  return c;
}

std::size_t Grid::shift(std::size_t i, int axis, int step) const {
  int c = static_cast<int>((i / stride_[axis]) % static_cast<std::size_t>(n_[axis]));
  int cn = wrap(c + step, n_[axis]);
  return i + (static_cast<std::ptrdiff_t>(cn) - c) * static_cast<std::ptrdiff_t>(stride_[axis]);
}

std::size_t Grid::offset(std::size_t i, const Site& dz) const {
  Site c = coords(i);
  for (int a = 0; a < 3; ++a) c[a] += dz[a];
  return index(c);
}

Site Grid::min_image(Site dz) const {
  for (int a = 0; a < 3; ++a) {
    int n = n_[a];
    int r = wrap(dz[a], n);
    if (2 * r > n) r -= n;
    dz[a] = r;
  }
  return dz;
}

double Grid::radius(const Site& dz) const {
  Site m = min_image(dz);
  return std::sqrt(double(m[0]) * m[0] + double(m[1]) * m[1] + double(m[2]) * m[2]);
}

int Grid::dist_inf(const Site& a, const Site& b) const {
  Site d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  d = min_image(d);
  int m = 0;
  for (int k = 0; k < 3; ++k) m = std::max(m, std::abs(d[k]));
  return m;
}

Site Grid::coarse_center(const Site& x) const {
  Site z{0, 0, 0};
  for (int a = 0; a < dim_; ++a) {
    // smallest multiple z of R with x - z <= R/2, i.e. z = R*ceil((2x - R) / 2R)
    long num = 2L * x[a] - R_;
    long den = 2L * R_;
    long q = num >= 0 ? (num + den - 1) / den : -((-num) / den);
    z[a] = wrap(static_cast<int>(q * R_), n_[a]);
  }
  return z;
}

std::vector<std::size_t> Grid::cube_sites(const Site& z) const {
  int lo = (R_ % 2 == 1) ? -(R_ - 1) / 2 : -R_ / 2 + 1;
  std::vector<std::size_t> out;
  Site c{};
  int r1 = dim_ > 1 ? R_ : 1, r2 = dim_ > 2 ? R_ : 1;
  for (int i = 0; i < R_; ++i)
    for (int j = 0; j < r1; ++j)
      for (int k = 0; k < r2; ++k) {
        c[0] = z[0] + lo + i;
        c[1] = dim_ > 1 ? z[1] + lo + j : 0;
        c[2] = dim_ > 2 ? z[2] + lo + k : 0;
        out.push_back(index(c));
      }
  return out;
}

std::vector<Site> Grid::coarse_points() const {
  std::vector<Site> out;
  int m0 = n_[0] / R_, m1 = dim_ > 1 ? n_[1] / R_ : 1, m2 = dim_ > 2 ? n_[2] / R_ : 1;
  for (int i = 0; i < m0; ++i)
    for (int j = 0; j < m1; ++j)
      for (int k = 0; k < m2; ++k) out.push_back({i * R_, dim_ > 1 ? j * R_ : 0, dim_ > 2 ? k * R_ : 0});
  return out;
}

std::array<double, 3> Grid::frequency(std::size_t i) const {
  Site c = coords(i);
  std::array<double, 3> xi{0, 0, 0};
  for (int a = 0; a < dim_; ++a) {
    int k = c[a];
    if (2 * k > n_[a]) k -= n_[a];
    xi[a] = 2.0 * std::numbers::pi * k / n_[a];
  }
  return xi;
}

std::string Grid::describe() const {
  std::string s = "d=" + std::to_string(dim_) + " L=";
  for (int a = 0; a < dim_; ++a) s += (a ? "x" : "") + std::to_string(n_[a]);
  s += " R=" + std::to_string(R_);
  return s;
}

}  // namespace hom
