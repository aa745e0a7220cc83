#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace hom {

using Site = std::array<int, 3>;

// Periodic lattice torus with a coarse cell size R. Site order is row-major,
// axis 0 slowest. Unused axes have side 1.
class Grid {
 public:
  Grid() = default;
  Grid(int dim, Site sides, int R = 1);
  static Grid cube(int dim, int L, int R = 1);

  int dim() const { return dim_; }
  int side(int axis) const { return n_[axis]; }
  const Site& sides() const { return n_; }
  int R() const { return R_; }
  std::size_t size() const { return size_; }
  Grid with_R(int R) const { return Grid(dim_, n_, R); }

  std::size_t index(const Site& c) const;  // wraps coordinates
  Site coords(std::size_t i) const;
  std::size_t shift(std::size_t i, int axis, int step) const;
  std::size_t offset(std::size_t i, const Site& dz) const;

  Site min_image(Site dz) const;
  double radius(const Site& dz) const;  // Euclidean length of the minimal image
  int dist_inf(const Site& a, const Site& b) const;

  // z_R: nearest point of R Z^d per axis, ties to the smaller multiple.
  Site coarse_center(const Site& x) const;
  // Q_R(z): R sites per axis around z, consistent with coarse_center.
  std::vector<std::size_t> cube_sites(const Site& z) const;
  std::vector<Site> coarse_points() const;

  // Frequency 2 pi k_j / L_j of linear index i, mapped into (-pi, pi].
  std::array<double, 3> frequency(std::size_t i) const;

  bool operator==(const Grid& o) const { return dim_ == o.dim_ && n_ == o.n_ && R_ == o.R_; }
  std::string describe() const;

 private:
  int dim_ = 1;
  Site n_{1, 1, 1};
  int R_ = 1;
  std::size_t size_ = 1;
  std::array<std::size_t, 3> stride_{1, 1, 1};
};

inline int wrap(int x, int n) {
  int r = x % n;
  return r < 0 ? r + n : r;
}

}  // namespace hom
