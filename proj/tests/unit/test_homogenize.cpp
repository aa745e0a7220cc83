#include <cmath>

#include "doctest.h"
#include "homlab/homogenize.hpp"
#include "homlab/lattice.hpp"

using namespace hom;

namespace {

SourceSpec two_modes() {
  SourceSpec s;
  FourierMode m;
  m.k = {1, 0, 0};
  m.re = {1, 0.5, 0};
  m.im = {0, 0.3, 0};
  s.modes.push_back(m);
  FourierMode m2;
  m2.k = {1, 1, 0};
  m2.re = {0.2, -0.4, 0};
  s.modes.push_back(m2);
  return s;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Ensemble exact(int d, int L, std::vector<double> vals) {
  Ensemble e = enumerate_exact(scalar_law_spec(d, vals), Grid::cube(d, L));
  normalize(e);
  return e;
}

// d = 1 flux constancy: a (grad u + f) = C with zero-mean grad u
std::vector<double> flux_closed_form(const double* a, const std::vector<double>& f) {
  const std::size_t N = f.size();
  double sfa = 0, sia = 0;
  for (std::size_t i = 0; i < N; ++i) {
    sfa += f[i] / a[i];
    sia += 1 / a[i];
  }
  const double C = sfa / sia;
  std::vector<double> g(N);
  for (std::size_t i = 0; i < N; ++i) g[i] = (C - f[i]) / a[i];
  return g;
}

}  // namespace

TEST_CASE("quenched solves") {
  SUBCASE("a = Id: grad u = -K f") {
    Ensemble e = exact(2, 8, {1.0});
    auto f = two_modes().sample(e.grid);
    auto q = solve_quenched(e, f);
    auto Kf = apply_K(e.grid, f);
    for (auto& x : Kf) x = -x;
    CHECK(max_diff(q.grad, Kf) < 1e-12);
  }
  SUBCASE("energy identity") {
    auto field = sample_iid(scalar_law_spec(2, {0.9, 1.1}), Grid::cube(2, 8), 3);
    auto q = solve_quenched(field, two_modes().sample(field.grid));
    CHECK(q.energy_residual < 1e-10);
  }
  SUBCASE("d = 1 closed form, and the exhaustive average") {
    Ensemble e = exact(1, 4, {0.9, 1.1});
    SourceSpec s;
    FourierMode m;
    m.k = {1, 0, 0};
    m.re = {0.7, 0, 0};
    m.im = {0.2, 0, 0};
    s.modes.push_back(m);
    auto f = s.sample(e.grid);
    auto avg = ensemble_average_solution(e, f);
    std::vector<double> brute(4, 0.0);
    for (std::size_t k = 0; k < e.members; ++k) {
      auto g = flux_closed_form(e.a_of(k), f);
      for (int i = 0; i < 4; ++i) {
        CHECK(std::abs(avg.quenched.grad[k * 4 + i] - g[i]) < 1e-10);
        brute[i] += e.weights[k] * g[i];
      }
    }
    CHECK(max_diff(avg.mean, brute) < 1e-12);
  }
  SUBCASE("single-member and constant ensembles") {
    auto field = sample_iid(scalar_law_spec(2, {0.9, 1.1}), Grid::cube(2, 8), 4);
    Ensemble one = single_member(field);
    auto f = two_modes().sample(field.grid);
    auto avg = ensemble_average_solution(one, f);
    CHECK(max_diff(avg.mean, solve_quenched(field, f).grad) < 1e-14);
    Ensemble c = exact(2, 4, {1.3});
    auto fc = two_modes().sample(c.grid);
    auto ac = ensemble_average_solution(c, fc);
    CHECK(max_diff(ac.mean, std::vector<double>(ac.quenched.grad.begin(), ac.quenched.grad.begin() + 32)) < 1e-14);
  }
}

TEST_CASE("homogenized proxy") {
  Grid g = Grid::cube(2, 16);
  auto f = two_modes().sample(g);
  Mat3 a0{1.2, 0.1, 0.1, 0.9};
  auto t1 = constant_tensors(2, a0, 3);
  // l = 1 is the constant-coefficient solution: check -div a0 grad u = div f
  auto u1 = homogenized_proxy(t1, g, f, 1);
  std::vector<double> flux(2 * g.size()), r(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    flux[i] = a0[0] * u1[i] + a0[1] * u1[g.size() + i] + f[i];
    flux[g.size() + i] = a0[2] * u1[i] + a0[3] * u1[g.size() + i] + f[g.size() + i];
  }
  divergence(g, flux.data(), r.data());
  double rm = 0;
  for (double x : r) rm = std::max(rm, std::abs(x));
  CHECK(rm < 1e-13);
  // vanishing higher tensors: every l gives the same field
  CHECK(max_diff(homogenized_proxy(t1, g, f, 3), u1) == 0);

  // l = 2 against a one-shot multiplier: m0 u2 = -i P_2 u1 on every mode
  std::vector<Freq> dirs = polarization_directions(2, 3);
  std::vector<std::vector<double>> vals, errs;
  for (const auto& e : dirs) {
    vals.push_back({e[0] * e[0] * a0[0] + 2 * e[0] * e[1] * a0[1] + e[1] * e[1] * a0[3], 0.05 * e[0] * e[1] * e[1]});
    errs.push_back({0, 0});
  }
  auto t2 = make_tensor_set(2, 2, dirs, vals, errs, "given");
  auto u2 = homogenized_proxy(t2, g, f, 2);
  auto first = homogenized_proxy(t2, g, f, 1);
  // assemble the correction mode by mode
  std::vector<double> corr(2 * g.size(), 0.0);
  const std::size_t N = g.size();
  std::vector<cplx> fh[2];
  for (int j = 0; j < 2; ++j) {
    fh[j].assign(N, 0);
    for (std::size_t x = 0; x < N; ++x)
      for (std::size_t k = 0; k < N; ++k) {
        auto xi = g.frequency(k);
        Site c = g.coords(x);
        fh[j][k] += f[j * N + x] * std::polar(1.0, -(xi[0] * c[0] + xi[1] * c[1]));
      }
  }
  std::vector<cplx> out[2] = {std::vector<cplx>(N, 0), std::vector<cplx>(N, 0)};
  for (std::size_t k = 0; k < N; ++k) {
    auto xi = g.frequency(k);
    cplx gg[2] = {std::polar(1.0, xi[0]) - 1.0, std::polar(1.0, xi[1]) - 1.0};
    cplx m0 = 0, gf = 0;
    for (int a = 0; a < 2; ++a) {
      gf += std::conj(gg[a]) * fh[a][k];
      for (int b = 0; b < 2; ++b) m0 += std::conj(gg[a]) * a0[a * 2 + b] * gg[b];
    }
    if (std::abs(m0) < 1e-14) continue;
    cplx u1h = -gf / m0;
    cplx u2h = -cplx(0, 1) * t2.P(2, xi) * u1h / m0;
    for (int j = 0; j < 2; ++j) out[j][k] = gg[j] * u2h;
  }
  for (int j = 0; j < 2; ++j)
    for (std::size_t x = 0; x < N; ++x) {
      Site c = g.coords(x);
      cplx s = 0;
      for (std::size_t k = 0; k < N; ++k) {
        auto xi = g.frequency(k);
        s += out[j][k] * std::polar(1.0, xi[0] * c[0] + xi[1] * c[1]);
      }
      corr[j * N + x] = s.real() / N;
    }
  std::vector<double> expect(2 * N);
  for (std::size_t i = 0; i < 2 * N; ++i) expect[i] = first[i] + corr[i];
  CHECK(max_diff(u2, expect) < 1e-12);

  // linear in f
  std::vector<double> f2(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) f2[i] = 2 * f[i] - 0.5 * f[(i * 7) % f.size()];
  std::vector<double> f3(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) f3[i] = f[(i * 7) % f.size()];
  auto a = homogenized_proxy(t2, g, f2, 2), b = homogenized_proxy(t2, g, f, 2), c = homogenized_proxy(t2, g, f3, 2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - (2 * b[i] - 0.5 * c[i])) < 1e-12);

  CHECK_THROWS_AS(homogenized_proxy(t2, g, f, 3), ParameterError);
}

TEST_CASE("rates and two-scale residual") {
  const std::vector<double> eps = {1.0 / 2, 1.0 / 4, 1.0 / 8, 1.0 / 16};
  SUBCASE("constant coefficients: exact") {
    Ensemble c = exact(2, 4, {1.3});
    auto t = constant_tensors(2, Mat3{1, 0, 0, 1}, 1);
    auto r = error_rate(c, t, two_modes(), eps, 1);
    CHECK(r.exact);
    auto ts = two_scale_residual(c, t, two_modes(), 0.25, 1);
    CHECK(ts.residual < 1e-12);
  }
  SUBCASE("periodic d = 2 cell, l = 1") {
    Ensemble cell = translates(sample_iid(scalar_law_spec(2, {0.9, 1.1}), Grid::cube(2, 2), 3));
    normalize(cell);
    auto t = tensors_from_symbol(cell, 1);
    auto r = error_rate(cell, t, two_modes(), eps, 1);
    CHECK(r.order() >= 0.7);
  }
  SUBCASE("two-scale residual, d = 1 periodic cell: decreases and respects the triangle bound") {
    // all translates of one two-valued cell (exact ensemble with a single effective coefficient)
    Ensemble cell = translates(sample_iid(scalar_law_spec(1, {0.9, 1.1}), Grid::cube(1, 4), 5));
    normalize(cell);
    auto t = tensors_from_symbol(cell, 1);
    SourceSpec s;
    FourierMode m;
    m.k = {1, 0, 0};
    m.re = {1, 0, 0};
    s.modes.push_back(m);
    auto a = two_scale_residual(cell, t, s, 1.0 / 8, 1);
    auto b = two_scale_residual(cell, t, s, 1.0 / 16, 1);
    CHECK(a.residual >= 1.5 * b.residual);
    CHECK(a.residual <= a.bound);
  }
}

TEST_CASE("Schur representation") {
  SUBCASE("single member: both identities reduce to the quenched equation") {
    Ensemble one = single_member(sample_iid(scalar_law_spec(2, {0.9, 1.1}), Grid::cube(2, 4), 6));
    normalize(one);
    auto r = verify_schur(one, two_modes());
    CHECK(r.homogenized_residual <= 1e-12);
    CHECK(r.fluctuation_residual <= 1e-12);
  }
  SUBCASE("d = 1 exact") {
    auto r = verify_schur(exact(1, 4, {0.9, 1.1}), two_modes());
    CHECK(r.homogenized_residual <= 1e-8);
    CHECK(r.fluctuation_residual <= 1e-8);
  }
}
