#include <cmath>

#include "doctest.h"
#include "homlab/green.hpp"

using namespace hom;

namespace {

GreenConfig small(int ell = 1) {
  GreenConfig c;
  c.sides = {48, 40};
  c.ell = ell;
  return c;
}

SymbolTable identity_symbol() {
  KernelTable k;
  k.grid = Grid::cube(3, 8);
  k.value.assign(k.grid.size() * 9, 0.0);
  return symbol_from_kernel(k, 0.1);
}

TensorSet with_order2(double c2) {
  auto dirs = polarization_directions(3, 3);
  std::vector<std::vector<double>> v, e;
  for (const auto& d : dirs) {
    v.push_back({1.0, c2 * d[0] * d[1] * d[2]});
    e.push_back({0, 0});
  }
  return make_tensor_set(3, 2, dirs, v, e, "given");
}

}  // namespace

TEST_CASE("cutoff profile") {
  CHECK(bump_cutoff(0, 2.5) == doctest::Approx(1.0));
  CHECK(bump_cutoff(2.5, 2.5) == 0);
  CHECK(bump_cutoff(3, 2.5) == 0);
  CHECK(bump_cutoff(1, 2.5) > bump_cutoff(2, 2.5));
  GreenConfig bad;
  bad.xi_max = 4;
  CHECK_THROWS(bad.validate());
  GreenConfig d2;
  d2.dim = 2;
  CHECK_THROWS(d2.validate());  // alpha = 0 needs d >= 3
  d2.alpha = {1, 0, 0};
  CHECK_NOTHROW(d2.validate());
}

TEST_CASE("identity symbol reproduces the homogenized route exactly") {
  auto t = constant_tensors(3, Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}, 1);
  auto tab = annealed_green(identity_symbol(), t, small());
  std::size_t differ = 0;
  for (std::size_t i = 0; i < tab.G.value.size(); ++i)
    differ += tab.G.value[i] != tab.Gbar.value[i] || tab.diff_bar.value[i] != 0;
  CHECK(differ == 0);
  CHECK(tab.G.max_imag <= 1e-12);
  CHECK(tab.ellipticity_margin >= 0);
}

TEST_CASE("homogenized Green function: |x|^{2-d} and corrections") {
  auto t1 = constant_tensors(3, Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}, 2);
  auto tab = homogenized_green_corrections(t1, small(2));
  auto fit = green_decay_fit(tab.grid, tab.Gbar, 4, 16);
  CHECK(fit.ok());
  CHECK(std::abs(fit.slope + 1) <= 0.15);
  // vanishing higher tensors: G^l = Gbar
  CHECK(tab.Gell.value == tab.Gbar.value);

  // l = 1 is Gbar by definition
  auto one = homogenized_green_corrections(with_order2(0.3), small(1));
  CHECK(one.Gell.value == one.Gbar.value);

  // second correction is homogeneous of degree 3 - d - n = -2: G~(2x) ~ G~(x)/4 away from the cutoff scale
  auto two = homogenized_green_corrections(with_order2(0.3), small(2));
  REQUIRE(two.tilde.size() >= 2);
  const auto& G2 = two.tilde[1];
  const Grid& g = two.grid;
  for (Site x : {Site{5, 3, 2}, Site{6, 2, 4}}) {
    Site x2{2 * x[0], 2 * x[1], 2 * x[2]};
    const double a = G2.value[g.index(x)], b = G2.value[g.index(x2)];
    CHECK(std::abs(b / a - 0.25) <= 0.05 + (G2.error[g.index(x)] / std::abs(a) + G2.error[g.index(x2)] / std::abs(b)));
  }
}

TEST_CASE("derivative tables are lattice differences of the alpha = 0 table") {
  auto t = constant_tensors(3, Mat3{1.1, 0, 0, 0, 0.9, 0, 0, 0, 1}, 1);
  auto base = homogenized_green_corrections(t, small());
  GreenConfig c1 = small();
  c1.alpha = {0, 1, 0};
  auto der = homogenized_green_corrections(t, c1);
  const Grid& g = base.grid;
  for (std::size_t i = 0; i < g.size(); i += 97) {
    const double fd = base.Gbar.value[g.shift(i, 1, 1)] - base.Gbar.value[i];
    const double tol = 1e-10 + base.Gbar.error[g.shift(i, 1, 1)] + base.Gbar.error[i] + der.Gbar.error[i];
    CHECK(std::abs(fd - der.Gbar.value[i]) <= tol);
  }
}

TEST_CASE("planted power law through the green fit") {
  Grid g = Grid::cube(3, 32);
  GreenField f;
  f.value.resize(g.size());
  f.error.assign(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double r = g.radius(g.min_image(g.coords(i)));
    f.value[i] = r > 0 ? 2.0 * std::pow(r, -2.5) : 0;
  }
  auto fit = green_decay_fit(g, f, 2, 10);
  CHECK(fit.slope == doctest::Approx(-2.5).epsilon(1e-6));
}
