#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "homlab/field.hpp"
#include "homlab/grid.hpp"

namespace hom {

// Points x_0..x_n on the R-sublattice. With a grid, distances are torus-aware.
struct PathRecord {
  int dim = 1;
  int R = 1;
  std::vector<Site> points;
  std::optional<Grid> torus;
  int length() const { return static_cast<int>(points.size()) - 1; }
  int dist(std::size_t a, std::size_t b) const;  // |x_a - x_b|_inf
};

struct QuotientGraph {
  std::vector<int> class_of;                    // per path point
  int classes = 0;
  std::vector<std::pair<int, int>> edges;       // one per non-loop step, multi-edges kept
  std::vector<int> degree;
  int source = 0, sink = 0;                     // classes of x_0 and x_n
  int max_flow = 0;                             // edge-disjoint trails source -> sink
  std::vector<std::vector<int>> trails;         // edge indices of up to max_flow trails
  bool parity_ok = false;                       // endpoints odd >= 3, others even >= 2
  std::string report;
};

struct Classification {
  bool reducible = false;
  int cut = -1;                                 // smallest valid cut index when reducible
  std::optional<QuotientGraph> graph;           // irreducible paths only, when requested
};

Classification classify(const PathRecord& p, bool with_graph = false);

// Requires an irreducible path with |x_0 - x_n|_inf > 2 R n; ParameterError otherwise.
QuotientGraph quotient_graph(const PathRecord& p);

enum class PathSelector { All, Reducible, Irreducible };
PathSelector selector_from_name(const std::string& s);

struct RestrictedSum {
  std::vector<double> value;   // d x d, row-major: target component, source component
  long long paths = 0;         // number of paths in the selected class
};

// Sum over interior points z_1..z_{n-1} of the per-path contributions
// < e_i delta_x, P b (K P^perp b 1_{Q(z_1)}) ... (K P^perp b) P e_k delta_y >.
// Endpoints x_0, x_n are the coarse centres of x and y. The torus-size guard (side >= 4 R n)
// can be lifted: classification is torus-aware, so the partition and the vanishing of
// reducible paths hold on any torus.
RestrictedSum restricted_term_sum(const Ensemble& e, int n, const Site& x, const Site& y, PathSelector sel,
                                  bool torus_guard = true);

struct PathTally {
  long long total = 0, reducible = 0, irreducible = 0;
};

// Interior points range over the R-sublattice box of radius `box` around `center`;
// endpoints fixed. n = 1 paths are reducible iff |x_0 - x_1|_inf > R.
PathTally enumerate_paths(int dim, int n, int box, int R, const Site& x0, const Site& xn, const Site& center,
                          const std::function<void(const PathRecord&, const Classification&)>& visit = {},
                          const std::optional<Grid>& torus = std::nullopt, long long capacity = 100000000LL);

}  // namespace hom
