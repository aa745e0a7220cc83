#include "homlab/paths.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "homlab/lattice.hpp"

namespace hom {

int PathRecord::dist(std::size_t a, std::size_t b) const {
  if (torus) return torus->dist_inf(points[a], points[b]);
  int m = 0;
  for (int k = 0; k < dim; ++k) m = std::max(m, std::abs(points[a][k] - points[b][k]));
  return m;
}

namespace {

void check_path(const PathRecord& p) {
  if (p.points.size() < 2) throw ParameterError("path needs at least two points");
  if (p.R < 1) throw ParameterError("coarse scale R must be >= 1");
  for (const auto& x : p.points)
    for (int k = 0; k < p.dim; ++k)
      if (x[k] % p.R != 0) throw ParameterError("path points must lie on the R-sublattice");
}

// Edmonds-Karp on an undirected multigraph with unit capacities per edge.
int max_flow(int nv, const std::vector<std::pair<int, int>>& edges, int s, int t,
             std::vector<std::vector<int>>* trails) {
  // arc 2e: u->v, arc 2e+1: v->u, both capacity 1
  const int ne = static_cast<int>(edges.size());
  std::vector<int> flow(2 * ne, 0);
  std::vector<std::vector<int>> adj(nv);
  for (int e = 0; e < ne; ++e) {
    adj[edges[e].first].push_back(2 * e);
    adj[edges[e].second].push_back(2 * e + 1);
  }
  auto head = [&](int arc) { return arc % 2 == 0 ? edges[arc / 2].second : edges[arc / 2].first; };
  // residual of an arc: 1 - flow(arc) + flow(reverse arc)
  auto residual = [&](int arc) { return 1 - flow[arc] + flow[arc ^ 1]; };
  int total = 0;
  if (s == t) return 0;
  while (true) {
    std::vector<int> via(nv, -1);
    std::deque<int> q{s};
    std::vector<char> seen(nv, 0);
    seen[s] = 1;
    while (!q.empty() && !seen[t]) {
      int u = q.front();
      q.pop_front();
      for (int arc : adj[u]) {
        int v = head(arc);
        if (!seen[v] && residual(arc) > 0) {
          seen[v] = 1;
          via[v] = arc;
          q.push_back(v);
        }
      }
    }
    if (!seen[t]) break;
    for (int v = t; v != s;) {
      int arc = via[v];
      if (flow[arc ^ 1] > 0)
        --flow[arc ^ 1];
      else
        ++flow[arc];
      v = arc % 2 == 0 ? edges[arc / 2].first : edges[arc / 2].second;
    }
    ++total;
  }
  if (trails) {
    // decompose the flow into edge lists (flow arcs form s->t paths plus possible cycles)
    std::vector<int> left(flow);
    for (int k = 0; k < total; ++k) {
      std::vector<int> trail;
      int u = s;
      int guard = 0;
      while (u != t && guard++ <= 2 * ne) {
        int next = -1;
        for (int arc : adj[u])
          if (left[arc] > 0) {
            next = arc;
            break;
          }
        if (next < 0) break;
        --left[next];
        trail.push_back(next / 2);
        u = head(next);
      }
      trails->push_back(trail);
    }
  }
  return total;
}

}  // namespace

Classification classify(const PathRecord& p, bool with_graph) {
  check_path(p);
  Classification c;
  const int n = p.length();
  if (n == 1) {
    c.reducible = p.dist(0, 1) > p.R;
    c.cut = c.reducible ? 0 : -1;
    return c;
  }
  for (int j = 0; j < n && !c.reducible; ++j) {
    bool ok = true;
    for (int a = 0; a <= j && ok; ++a)
      for (int b = j + 1; b <= n && ok; ++b) ok = p.dist(a, b) > p.R;
    if (ok) {
      c.reducible = true;
      c.cut = j;
    }
  }
  if (!c.reducible && with_graph) {
    const int sep = p.dist(0, static_cast<std::size_t>(n));
    if (sep > 2 * p.R * n) c.graph = quotient_graph(p);
  }
  return c;
}

QuotientGraph quotient_graph(const PathRecord& p) {
  check_path(p);
  const int n = p.length();
  if (n < 2) throw ParameterError("quotient graph needs n >= 2");
  if (p.dist(0, n) <= 2 * p.R * n) throw ParameterError("quotient graph needs |x_0 - x_n|_inf > 2 R n");
  if (classify(p).reducible) throw ParameterError("quotient graph needs an irreducible path");
  QuotientGraph g;
  const int np = n + 1;
  // union-find over |.|_inf <= R
  std::vector<int> parent(np);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
  for (int a = 0; a < np; ++a)
    for (int b = a + 1; b < np; ++b)
      if (p.dist(a, b) <= p.R) parent[find(a)] = find(b);
  std::vector<int> label(np, -1);
  g.class_of.assign(np, -1);
  for (int a = 0; a < np; ++a) {
    int r = find(a);
    if (label[r] < 0) label[r] = g.classes++;
    g.class_of[a] = label[r];
  }
  g.degree.assign(g.classes, 0);
  for (int i = 0; i < n; ++i) {
    int u = g.class_of[i], v = g.class_of[i + 1];
    if (u == v) continue;  // loops dropped
    g.edges.push_back({u, v});
    ++g.degree[u];
    ++g.degree[v];
  }
  g.source = g.class_of[0];
  g.sink = g.class_of[n];
  g.parity_ok = true;
  for (int c = 0; c < g.classes; ++c) {
    const bool end = c == g.source || c == g.sink;
    if (end ? (g.degree[c] % 2 != 1 || g.degree[c] < 3) : (g.degree[c] % 2 != 0 || g.degree[c] < 2))
      g.parity_ok = false;
  }
  g.max_flow = max_flow(g.classes, g.edges, g.source, g.sink, &g.trails);
  if (!g.parity_ok || g.max_flow < 3)
    g.report = "counterexample: degrees or trail count violate the irreducible-path structure";
  else
    g.report = "ok";
  return g;
}

PathSelector selector_from_name(const std::string& s) {
  if (s == "all") return PathSelector::All;
  if (s == "reducible" || s == "reducible-only") return PathSelector::Reducible;
  if (s == "irreducible" || s == "irreducible-only") return PathSelector::Irreducible;
  throw ConfigError("unknown path selector '" + s + "'");
}

RestrictedSum restricted_term_sum(const Ensemble& e, int n, const Site& x, const Site& y, PathSelector sel,
                                  bool torus_guard) {
  if (!e.exact) throw ParameterError("restricted sums need an Exact ensemble");
  if (!e.normalized || e.b.empty()) throw ParameterError("restricted sums need a normalized ensemble");
  if (n < 1 || n > 4) throw ParameterError("restricted sums support 1 <= n <= 4");
  const Grid& g = e.grid;
  const int d = g.dim(), R = g.R();
  for (int a = 0; a < d && torus_guard; ++a)
    if (g.side(a) < 4 * R * n) throw ParameterError("restricted sums need a torus of side >= 4 R n");
  const auto coarse = g.coarse_points();
  const double count = std::pow(double(coarse.size()), n - 1);
  if (count > 1e7) throw CapacityError("restricted sum over " + std::to_string(static_cast<long long>(count)) + " paths");
  const std::size_t N = g.size(), M = e.members, nv = N * d;
  const std::size_t xs = g.index(x), ys = g.index(y);

  PathRecord path;
  path.dim = d;
  path.R = R;
  path.torus = g;
  path.points.assign(n + 1, Site{0, 0, 0});
  path.points[0] = g.coarse_center(x);
  path.points[n] = g.coarse_center(y);

  std::vector<std::vector<CompensatedSum<double>>> acc(d, std::vector<CompensatedSum<double>>(d));
  RestrictedSum out;
  out.value.assign(d * d, 0.0);

  auto mean_at = [&](const std::vector<double>& t, int j) {
    CompensatedSum<double> s;
    for (std::size_t m = 0; m < M; ++m) s.add(e.weights[m] * t[m * nv + j * N + xs]);
    return s.value();
  };
  auto perp = [&](std::vector<double>& t) {
    std::vector<double> mean(nv, 0.0);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < nv; ++i) mean[i] += e.weights[m] * t[m * nv + i];
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < nv; ++i) t[m * nv + i] -= mean[i];
  };
  // u <- K P^perp b (1_Q u); Q empty means no restriction
  auto step = [&](const std::vector<double>& u, const std::vector<std::size_t>* Q) {
    std::vector<double> in(M * nv, 0.0), t(M * nv);
    if (Q) {
      for (std::size_t m = 0; m < M; ++m)
        for (int j = 0; j < d; ++j)
          for (std::size_t s : *Q) in[m * nv + j * N + s] = u[m * nv + j * N + s];
    } else {
      in = u;
    }
    for (std::size_t m = 0; m < M; ++m) apply_coeff(e.b_of(m), in.data() + m * nv, t.data() + m * nv, N, d, e.scalar);
    perp(t);
    std::vector<double> out_(M * nv);
    apply_K(g, t.data(), out_.data(), M);
    return out_;
  };

  for (int col = 0; col < d; ++col) {
    std::vector<double> u(M * nv, 0.0);
    for (std::size_t m = 0; m < M; ++m) u[m * nv + col * N + ys] = 1.0;
    u = step(u, nullptr);  // (K P^perp b) P phi_y
    // depth-first over z_{n-1}, ..., z_1
    std::function<void(int, const std::vector<double>&)> dfs = [&](int level, const std::vector<double>& v) {
      if (level == 0) {
        const bool red = classify(path).reducible;
        if ((sel == PathSelector::Reducible && !red) || (sel == PathSelector::Irreducible && red)) return;
        if (col == 0) ++out.paths;
        // P b 1_{Q(x)} evaluated at x
        std::vector<double> t(M * nv);
        for (std::size_t m = 0; m < M; ++m) apply_coeff(e.b_of(m), v.data() + m * nv, t.data() + m * nv, N, d, e.scalar);
        for (int j = 0; j < d; ++j) acc[j][col].add(mean_at(t, j));
        return;
      }
      for (const auto& z : coarse) {
        path.points[level] = z;
        auto Q = g.cube_sites(z);
        dfs(level - 1, step(v, &Q));
      }
    };
    dfs(n - 1, u);
  }
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) out.value[j * d + k] = acc[j][k].value();
  return out;
}

PathTally enumerate_paths(int dim, int n, int box, int R, const Site& x0, const Site& xn, const Site& center,
                          const std::function<void(const PathRecord&, const Classification&)>& visit,
                          const std::optional<Grid>& torus, long long capacity) {
  if (n < 1) throw ParameterError("path length must be >= 1");
  if (box < 0 || R < 1) throw ParameterError("box radius must be >= 0 and R >= 1");
  if (torus)
    for (int a = 0; a < dim; ++a)
      if (4 * (2 * box + 1) >= torus->side(a)) throw ParameterError("enumeration box must stay below L/4 on the torus");
  const int per_axis = 2 * (box / R) + 1;
  const double count = std::pow(double(per_axis), double(dim) * (n - 1));
  if (count > double(capacity))
    throw CapacityError("path enumeration of " + std::to_string(static_cast<long long>(count)) + " paths");
  std::vector<Site> box_pts;
  const int lo = -(box / R) * R;
  for (int i = 0; i < per_axis; ++i)
    for (int j = 0; j < (dim > 1 ? per_axis : 1); ++j)
      for (int k = 0; k < (dim > 2 ? per_axis : 1); ++k)
        box_pts.push_back({center[0] + lo + i * R, dim > 1 ? center[1] + lo + j * R : 0,
                           dim > 2 ? center[2] + lo + k * R : 0});
  PathRecord p;
  p.dim = dim;
  p.R = R;
  p.torus = torus;
  p.points.assign(n + 1, Site{0, 0, 0});
  p.points[0] = x0;
  p.points[n] = xn;
  PathTally tally;
  std::function<void(int)> rec = [&](int level) {
    if (level == n) {
      auto c = classify(p);
      ++tally.total;
      (c.reducible ? tally.reducible : tally.irreducible)++;
      if (visit) visit(p, c);
      return;
    }
    for (const auto& z : box_pts) {
      p.points[level] = z;
      rec(level + 1);
    }
  };
  rec(1);
  return tally;
}

}  // namespace hom
