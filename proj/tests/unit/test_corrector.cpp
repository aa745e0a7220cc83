#include <cmath>

#include "doctest.h"
#include "homlab/corrector.hpp"
#include "homlab/lattice.hpp"

using namespace hom;

namespace {

Ensemble cell_translates(int d, int L, std::vector<double> vals, std::uint64_t seed) {
  Ensemble e = translates(sample_iid(scalar_law_spec(d, vals), Grid::cube(d, L), seed));
  normalize(e);
  return e;
}

double harmonic(const Ensemble& e) {
  double s = 0;
  for (std::size_t i = 0; i < e.grid.size(); ++i) s += 1 / e.a_of(0)[i * e.dim() * e.dim()];
  return e.grid.size() / s;
}

}  // namespace

TEST_CASE("constant field: correctors vanish, tensors are the constant") {
  Ensemble e = enumerate_exact(scalar_law_spec(2, {1.4}), Grid::cube(2, 4));
  normalize(e);
  auto st = solve_massive_corrector(e, 1e-2, {1, 0, 0}, 3);
  for (int n = 1; n <= 3; ++n)
    for (double x : st.phi[n]) CHECK(x == 0);
  CHECK(homogenized_tensor(st, 1) == doctest::Approx(1.0));
  CHECK(homogenized_tensor(st, 2) == 0);
  auto t = constant_tensors(2, Mat3{2, 0, 0, 3}, 3);
  CHECK(t.a1()[0] == doctest::Approx(2.0));
  CHECK(t.a1()[3] == doctest::Approx(3.0));
  CHECK(t.P(2, {0.3, 0.4, 0}) == 0);
}

TEST_CASE("massive corrector properties") {
  Ensemble e = enumerate_exact(scalar_law_spec(2, {0.9, 1.1}), Grid::cube(2, 2));
  normalize(e);
  const std::size_t N = e.grid.size();
  SUBCASE("zero expectation per order") {
    auto st = solve_massive_corrector(e, 1e-2, {0.6, 0.8, 0}, 3);
    for (int n = 1; n <= 3; ++n) {
      auto m = e.expect(st.phi[n].data(), 1);
      for (double x : m) CHECK(std::abs(x) < 1e-14);
    }
  }
  SUBCASE("large mass: |phi1| <= |div(a e)| / mu") {
    const double mu = 1e3;
    auto st = solve_massive_corrector(e, mu, {1, 0, 0}, 1);
    double lhs = 0, rhs = 0;
    std::vector<double> ae(2 * N, 0.0), div(N);
    for (std::size_t m = 0; m < e.members; ++m) {
      for (std::size_t i = 0; i < N; ++i) ae[i] = e.a_of(m)[i * 4];
      divergence(e.grid, ae.data(), div.data());
      for (std::size_t i = 0; i < N; ++i) {
        lhs += e.weights[m] * sq(st.phi[1][m * N + i]);
        rhs += e.weights[m] * sq(div[i]);
      }
    }
    CHECK(std::sqrt(lhs) <= std::sqrt(rhs) / mu);
  }
}

TEST_CASE("d = 1: corrector gradient and harmonic mean") {
  Ensemble e = cell_translates(1, 8, {1.0, 2.0}, 3);
  const double hm = harmonic(e);
  SUBCASE("grad phi1 -> abar/a - 1 pointwise") {
    auto st = solve_massive_corrector(e, 1e-9, {1, 0, 0}, 1);
    std::vector<double> g(8);
    gradient(e.grid, st.phi[1].data(), g.data());
    for (int i = 0; i < 8; ++i) CHECK(std::abs(g[i] - (hm / e.a_of(0)[i] - 1)) < 1e-6);
  }
  SUBCASE("Richardson over mu in {1e-1, 1e-2, 1e-3}") {
    std::vector<double> mus{1e-1, 1e-2, 1e-3}, v;
    for (double mu : mus) v.push_back(homogenized_tensor(solve_massive_corrector(e, mu, {1, 0, 0}, 1), 1));
    auto x = extrapolate_mu(mus, v);
    CHECK(std::abs(x.value - hm) < 1e-4);
  }
}

TEST_CASE("Richardson extrapolation") {
  auto c = extrapolate_mu({1e-1, 1e-2, 1e-3}, {2.5, 2.5, 2.5});
  CHECK(c.value == 2.5);
  CHECK(c.error == 0);
  auto a = extrapolate_mu({1e-1, 3e-2, 1e-2, 3e-3}, {1 + 0.1 * 4, 1 + 0.03 * 4, 1 + 0.01 * 4, 1 + 0.003 * 4});
  CHECK(a.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(extrapolate_mu({1e-1, 1e-2}, {1, 1}), ParameterError);
}

TEST_CASE("symbol finite differences") {
  SUBCASE("constant symbol") {
    ContractedSymbol h = [](const Freq&, const Freq&) { return cplx(1.7, 0); };
    auto t = tensors_from_symbol(h, 2, 3);
    for (std::size_t di = 0; di < t.directions.size(); ++di) {
      CHECK(t.contracted[di][0] == doctest::Approx(1.7));
      CHECK(std::abs(t.contracted[di][1]) < 1e-10);
      CHECK(std::abs(t.contracted[di][2]) < 1e-10);
    }
  }
  SUBCASE("planted polynomial recovered") {
    // h(t e) = c0 + c1 (i t) + c2 (i t)^2 + c3 (i t)^3 with direction-dependent coefficients
    auto coef = [](const Freq& e, int k) {
      switch (k) {
        case 0: return 1.0 + 0.2 * e[0] * e[1];
        case 1: return 0.3 * e[0] * e[0] * e[0];
        case 2: return -0.1 * e[1] * e[1] * e[0] * e[0];
        default: return 0.05 * e[0] * e[1] * e[1] * e[1] * e[1];
      }
    };
    ContractedSymbol h = [&](const Freq& xi, const Freq& e) {
      const double t = xi[0] * e[0] + xi[1] * e[1];
      cplx v = 0, it = 1;
      for (int k = 0; k <= 3; ++k, it *= cplx(0, t)) v += coef(e, k) * it;
      return v;
    };
    auto t = tensors_from_symbol(h, 2, 4);
    for (std::size_t di = 0; di < t.directions.size(); ++di)
      for (int n = 1; n <= 4; ++n)
        CHECK(t.contracted[di][n - 1] == doctest::Approx(coef(t.directions[di], n - 1)).epsilon(1e-8));
    CHECK_THROWS_AS(tensors_from_symbol(h, 2, 5), ParameterError);
  }
}

TEST_CASE("abar1 between harmonic and arithmetic means, routes agree") {
  Ensemble e = cell_translates(2, 4, {0.9, 1.1}, 3);
  auto s = tensors_from_symbol(e, 2);
  double hm = 0, am = 0;
  for (std::size_t i = 0; i < e.grid.size(); ++i) {
    hm += 1 / e.a_of(0)[i * 4];
    am += e.a_of(0)[i * 4];
  }
  hm = e.grid.size() / hm;
  am /= e.grid.size();
  for (double v : {s.a1()[0], s.a1()[3]}) {
    CHECK(v > hm);
    CHECK(v < am);
  }
  auto m = tensors_massive(e, 2);
  for (std::size_t di = 0; di < m.directions.size(); ++di)
    for (int n = 1; n <= 2; ++n)
      CHECK(std::abs(m.contracted[di][n - 1] - s.contracted[di][n - 1]) <= m.error[di][n - 1] + s.error[di][n - 1]);
}

TEST_CASE("weak corrector trivial cases") {
  const int L = 48;
  auto spec = scalar_law_spec(2, {1.2});
  Ensemble c = single_member(sample_iid(spec, Grid::cube(2, L), 1));
  c.spec = spec;
  normalize(c);
  WeakCorrectorOptions opt;
  opt.resamples = 4;
  for (int n : {1, 3}) CHECK(weak_corrector(spec, c.member(0), n, {1, 0, 0}, {4, 0, 0}, 2, opt).value == 0);

  auto law = scalar_law_spec(2, {0.9, 1.1});
  Ensemble r = single_member(sample_iid(law, Grid::cube(2, L), 2));
  r.spec = law;
  normalize(r);
  CoefficientField fr = r.member(0);
  fr.b = r.b;
  fr.delta = r.delta;
  // x plus the frozen ball must stay inside the polynomial window
  CHECK_THROWS_AS(weak_corrector(law, fr, 1, {1, 0, 0}, {8, 0, 0}, 2, opt), ParameterError);
  CHECK_THROWS_AS(weak_corrector(law, fr, 4, {1, 0, 0}, {2, 0, 0}, 2, opt), ParameterError);
  auto w = weak_corrector(law, fr, 1, {1, 0, 0}, {4, 0, 0}, 2, opt);
  CHECK(std::isfinite(w.value));
  CHECK(w.resamples == 4);
}
