#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace hom {

// Scalar field: N values. Vector field: dim consecutive blocks of N values.
// Batched routines act on `count` such fields stored back to back.

using Freq = std::array<double, 3>;

// Forward-difference symbol g_j(k) = exp(i (k_j + xi_j)) - 1 on the frequency grid.
struct DiffSymbol {
  DiffSymbol(const Grid& grid, Freq xi = {0, 0, 0});
  std::vector<cplx> g[3];
  std::vector<double> g2;  // sum_j |g_j|^2
};
const DiffSymbol& unshifted_symbol(const Grid& grid);

// Neighbour tables for the periodic stencils.
struct Neighbors {
  explicit Neighbors(const Grid& grid);
  std::vector<std::size_t> next[3], prev[3];
};
const Neighbors& neighbors(const Grid& grid);

void gradient(const Grid& grid, const double* u, double* g, std::size_t count = 1);
void divergence(const Grid& grid, const double* g, double* out, std::size_t count = 1);
// xi-conjugated versions: grad_j u = e^{i xi_j} u(x+e_j) - u(x),
// div g = sum_j g_j(x) - e^{-i xi_j} g_j(x-e_j).
void gradient(const Grid& grid, const cplx* u, cplx* g, const Freq& xi, std::size_t count = 1);
void divergence(const Grid& grid, const cplx* g, cplx* out, const Freq& xi, std::size_t count = 1);

// (mu - div grad) u = f, spectral. mu = 0 requires mean-zero f (zero mode set to 0).
void solve_poisson(const Grid& grid, const double* f, double* u, double mu, std::size_t count = 1);
std::vector<double> solve_poisson(const Grid& grid, const std::vector<double>& f, double mu);

// K = grad Delta^{-1} div, symbol g_j conj(g_k)/|g|^2, zero at the zero mode.
void apply_K(const Grid& grid, const double* g, double* out, std::size_t count = 1);
std::vector<double> apply_K(const Grid& grid, const std::vector<double>& g);

// Real-space kernel K_{jk}(z), stored as dim*dim blocks of N (block j*dim+k).
std::vector<double> K_kernel(const Grid& grid);
// K_{l;R}: kernel masked by |z_R(x) - z_R(y)|_inf <= l, applied by direct convolution.
std::vector<double> apply_truncated_K(const Grid& grid, const std::vector<double>& g, int ell);

// l^p over coarse cells Q_R of l^q within cells; vector values use the Euclidean
// norm per site. p, q may be INFINITY.
double mixed_norm(const Grid& grid, const std::vector<double>& g, int comps, double p, double q);

struct OperatorHandle {
  std::string name;
  Grid grid;
  int ell = 0;  // 0: untruncated
  std::function<void(const double* in, double* out)> apply;  // vector field -> vector field

  std::vector<double> operator()(const std::vector<double>& in) const;
};
OperatorHandle identity_operator(const Grid& grid);
OperatorHandle multiply_operator(const Grid& grid, std::vector<double> field);  // per-site dim x dim
OperatorHandle K_operator(const Grid& grid);
OperatorHandle truncated_K_operator(const Grid& grid, int ell);
OperatorHandle compose(const OperatorHandle& a, const OperatorHandle& b);  // a after b

struct KernelNorm {
  double value = 0;        // q=2: converged estimate; otherwise certified lower bound
  double upper = 0;        // q=2: same as value; otherwise Riesz-Thorin upper bound
  int iterations = 0;
  std::string method;
};
// Norm of 1_{Q_R(x)} T 1_{Q_R(y)} on l^q (vector fields flattened entrywise).
KernelNorm averaged_kernel_norm(const OperatorHandle& T, const Site& x, const Site& y, double q,
                                int max_iter = 2000, double rtol = 1e-10, std::uint64_t seed = 1);

}  // namespace hom
