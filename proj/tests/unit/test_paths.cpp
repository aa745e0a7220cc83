#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "homlab/paths.hpp"
#include "homlab/series.hpp"

using namespace hom;

namespace {

PathRecord line(int R, std::vector<int> xs) {
  PathRecord p;
  p.dim = 1;
  p.R = R;
  for (int x : xs) p.points.push_back({x, 0, 0});
  return p;
}

Ensemble exact_on(EnsembleSpec s, Grid g) {
  Ensemble e = enumerate_exact(s, g);
  normalize(e);
  return e;
}

}  // namespace

TEST_CASE("classification examples") {
  auto a = classify(line(1, {0, 5, 10}));
  CHECK(a.reducible);
  CHECK(a.cut == 0);
  CHECK_FALSE(classify(line(1, {0, 5, 0, 5})).reducible);
  CHECK_FALSE(classify(line(2, {0, 2, 4})).reducible);
  // n = 1: reducible iff the endpoints are more than R apart
  CHECK(classify(line(1, {0, 2})).reducible);
  CHECK_FALSE(classify(line(1, {0, 1})).reducible);
  CHECK_THROWS_AS(classify(line(2, {0, 3})), ParameterError);  // off the sublattice
}

TEST_CASE("quotient graph of a back-and-forth path") {
  auto g = quotient_graph(line(1, {0, 7, 0, 7}));
  CHECK(g.classes == 2);
  CHECK(g.edges.size() == 3);
  CHECK(g.degree == std::vector<int>{3, 3});
  CHECK(g.max_flow == 3);
  CHECK(g.parity_ok);
  CHECK(g.trails.size() == 3);
  CHECK_THROWS_AS(quotient_graph(line(1, {0, 5, 10})), ParameterError);  // reducible
  CHECK_THROWS_AS(quotient_graph(line(1, {0, 2, 0, 2})), ParameterError);  // too close
}

TEST_CASE("random irreducible paths: parity and three disjoint trails") {
  std::mt19937_64 rng(2024);
  int found = 0;
  for (int tries = 0; found < 10000 && tries < 2000000; ++tries) {
    const int n = 2 + static_cast<int>(rng() % 7);
    const int d = 1 + static_cast<int>(rng() % 2);
    const int R = 1 + static_cast<int>(rng() % 2);
    const int sep = 2 * R * n + R;
    PathRecord p;
    p.dim = d;
    p.R = R;
    // interior points cluster near either endpoint so irreducibility is common
    std::uniform_int_distribution<int> jitter(-2, 2);
    for (int i = 0; i <= n; ++i) {
      Site s{0, 0, 0};
      const bool far = i == n || (i > 0 && (rng() & 1));
      for (int k = 0; k < d; ++k) s[k] = (jitter(rng) + (far && k == 0 ? sep / R : 0)) * R;
      if (i == 0) s = {0, 0, 0};
      if (i == n) s = {sep - sep % R, 0, 0};
      p.points.push_back(s);
    }
    auto c = classify(p, true);
    if (c.reducible || !c.graph) continue;
    ++found;
    CHECK(c.graph->parity_ok);
    CHECK(c.graph->max_flow >= 3);
  }
  CHECK(found == 10000);
}

TEST_CASE("path enumeration") {
  for (auto [d, n, box, R] : {std::array{1, 3, 4, 1}, std::array{2, 2, 4, 2}, std::array{2, 3, 2, 1}}) {
    const Site x0{0, 0, 0}, xn{4 * R, 0, 0}, mid{2 * R, 0, 0};
    auto t = enumerate_paths(d, n, box, R, x0, xn, mid);
    CHECK(t.total == static_cast<long long>(std::pow(2 * box / R + 1, d * (n - 1))));
    CHECK(t.total == t.reducible + t.irreducible);
    // tallies are translation invariant
    const Site s{3 * R, -2 * R, 0};
    auto sh = [&](Site x) { return Site{x[0] + s[0], d > 1 ? x[1] + s[1] : 0, 0}; };
    auto u = enumerate_paths(d, n, box, R, sh(x0), sh(xn), sh(mid));
    CHECK(u.reducible == t.reducible);
    CHECK(u.irreducible == t.irreducible);
  }
  CHECK_THROWS_AS(enumerate_paths(2, 4, 20, 1, {0, 0, 0}, {8, 0, 0}, {4, 0, 0}, {}, std::nullopt, 1000), CapacityError);
}

TEST_CASE("classification is invariant under reversal and translation") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> u(-3, 3);
  for (int it = 0; it < 2000; ++it) {
    PathRecord p;
    p.dim = 2;
    p.R = 1;
    const int n = 1 + it % 5;
    for (int i = 0; i <= n; ++i) p.points.push_back({u(rng), u(rng), 0});
    const bool red = classify(p).reducible;
    PathRecord r = p;
    std::reverse(r.points.begin(), r.points.end());
    CHECK(classify(r).reducible == red);
    PathRecord t = p;
    for (auto& x : t.points) {
      x[0] += 11;
      x[1] -= 6;
    }
    CHECK(classify(t).reducible == red);
  }
}

TEST_CASE("restricted sums on exact ensembles") {
  SUBCASE("i.i.d.: partition, total = term kernel, reducible part vanishes") {
    Ensemble e = exact_on(scalar_law_spec(1, {0.9, 1.1}), Grid::cube(1, 8));
    const Site x{1, 0, 0}, y{5, 0, 0};
    auto full = term_kernel(e, 3, y);
    auto all = restricted_term_sum(e, 3, x, y, PathSelector::All, false);
    auto red = restricted_term_sum(e, 3, x, y, PathSelector::Reducible, false);
    auto irr = restricted_term_sum(e, 3, x, y, PathSelector::Irreducible, false);
    CHECK(all.paths == 64);
    CHECK(red.paths + irr.paths == all.paths);
    CHECK(std::abs(all.value[0] - (red.value[0] + irr.value[0])) < 1e-15);
    CHECK(std::abs(all.value[0] - full.at(e.grid.index(x), 0, 0)) < 1e-14);
    CHECK(std::abs(red.value[0]) < 1e-15);
    CHECK(std::abs(irr.value[0]) > 1e-6);
    CHECK_THROWS_AS(restricted_term_sum(e, 3, x, y, PathSelector::All, true), ParameterError);
  }
  SUBCASE("blocks: reducible paths vanish once R covers the dependence range") {
    EnsembleSpec s = scalar_law_spec(1, {0.9, 1.1});
    s.model = Model::BlockIndependent;
    s.block = 4;
    const Site x{0, 0, 0}, y{4, 0, 0};
    Ensemble fine = exact_on(s, Grid::cube(1, 8, 1));
    auto r1 = restricted_term_sum(fine, 3, x, y, PathSelector::Reducible, false);
    CHECK(std::abs(r1.value[0]) > 1e-6);
    Ensemble coarse = exact_on(s, Grid::cube(1, 8, 4));
    auto r4 = restricted_term_sum(coarse, 3, x, y, PathSelector::Reducible, false);
    auto a4 = restricted_term_sum(coarse, 3, x, y, PathSelector::All, false);
    CHECK(std::abs(r4.value[0]) < 1e-15);
    CHECK(std::abs(a4.value[0] - term_kernel(coarse, 3, y).at(coarse.grid.index(x), 0, 0)) < 1e-14);
  }
}

TEST_CASE("selector names") {
  CHECK(selector_from_name("all") == PathSelector::All);
  CHECK(selector_from_name("reducible-only") == PathSelector::Reducible);
  CHECK(selector_from_name("irreducible") == PathSelector::Irreducible);
  CHECK_THROWS_AS(selector_from_name("some"), ConfigError);
}
