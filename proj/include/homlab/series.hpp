#pragma once

#include <string>
#include <vector>

#include "homlab/field.hpp"
#include "homlab/fit.hpp"
#include "homlab/lattice.hpp"

namespace hom {

// Kernel k(x, y) for a fixed source y, all targets x. Site-major d x d blocks.
struct KernelTable {
  Grid grid;
  int order = 0;  // n for a single term; -N for a partial sum to N
  Site source{0, 0, 0};
  std::vector<double> value;
  std::vector<double> stderr_;  // empty on exact ensembles
  double truncation_bound = 0;
  std::string ensemble;

  int dim() const { return grid.dim(); }
  double at(std::size_t site, int j, int k) const { return value[site * dim() * dim() + j * dim() + k]; }
  // Frobenius norm per site (and propagated error bound per site).
  std::vector<double> site_norms() const;
  std::vector<double> site_errors() const;
};

// E[b (K P^perp b)^n] applied to indicator inputs at y, for n = 1..n_max.
// Uses per-site ensemble means (the ensemble must be normalized).
std::vector<KernelTable> term_kernels(const Ensemble& e, int n_max, const Site& y = {0, 0, 0});
KernelTable term_kernel(const Ensemble& e, int n, const Site& y = {0, 0, 0});

// Alternating partial sum sum_{n=1}^N (-delta)^n T_n with bound delta^{N+1}/(1-delta).
// N = 0 picks ceil(log(tol)/log(delta)).
KernelTable bcal_kernel(const Ensemble& e, double delta, int N = 0, const Site& y = {0, 0, 0}, double tol = 1e-14);

struct SymbolPoint {
  Freq xi{0, 0, 0};
  std::vector<cplx> A;    // d x d row-major
  std::vector<cplx> psi;  // optional: members x d(columns) x d x N, Psi e_k = grad_xi chi_k
  std::vector<cplx> chi;  // optional: members x d(columns) x N
  double residual = 0;
  int iterations = 0;
  bool regularized = false;
  double mu = 0;
};

// Bloch symbol at an arbitrary real xi: A(xi) e_k = E[a (e_k + grad_xi chi_k)] averaged
// over sites, chi_k in range(P^perp) solving the projected cell problem.
SymbolPoint symbol_exact(const Ensemble& e, const Freq& xi, bool keep_fields = false, double rtol = 1e-12,
                         int max_iter = 5000);

struct SymbolTable {
  Grid grid;                // frequency grid
  std::vector<cplx> A;      // N x d x d, site-major over frequencies
  double max_imag = 0;      // max |Im A_jk| (reported)
  double hermitian_residual = 0;
  double conjugate_residual = 0;  // max |A(-xi) - conj A(xi)|
  double max_imag_m = 0;          // max |Im conj(g)^T A g| / |g|^2
  double ellipticity_margin = 0;  // min over xi of lambda_min(Herm A) - 1/C0
  double bound_margin = 0;        // min over xi of C0^3 - |A|
  bool regularized = false;

  int dim() const { return grid.dim(); }
  cplx at(std::size_t f, int j, int k) const { return A[f * dim() * dim() + j * dim() + k]; }
};
void diagnose(SymbolTable& t, double C0);

SymbolTable symbol_table_exact(const Ensemble& e, double rtol = 1e-12);
// Bloch symbol sampled at the frequencies of an arbitrary grid (conjugate symmetry
// halves the work). Same dimension as the ensemble.
SymbolTable symbol_table_bloch(const Ensemble& e, const Grid& freq, double rtol = 1e-12);
// A(xi) = Id + delta sum_z k(z) e^{-i xi z}, with k the kernel for source 0.
SymbolTable symbol_from_kernel(const KernelTable& k, double delta);
// Inverse: k(z) = (A - Id)/delta transformed back (real part; imaginary part returned in max_imag).
KernelTable kernel_from_symbol(const SymbolTable& t, double delta, double* max_imag = nullptr);

// Deterministic kernels.
// n = 3 term for i.i.d. +-1 at x != y: K(x-y) K(y-x) K(x-y) (matrix products).
KernelTable pairing_kernel_n3(const Grid& grid);

// E[tanh X tanh Y] and E[tanh^2 X tanh^2 Y] - (E tanh X tanh Y)^2 for standard normals
// with correlation rho, via Hermite (Mehler) expansions.
struct MehlerTanh {
  MehlerTanh(int terms = 160);
  double cov(double rho) const;
  double pattern_moment(double rho) const;
  double second_moment() const { return m2_; }
  std::vector<double> odd_, even_;  // squared normalized Hermite coefficients
  double m2_ = 0;
};

struct GaussianTerms {
  Grid grid;
  std::vector<double> c;      // correlation of G, c(0) = 1
  std::vector<double> cov_b;  // covariance of b = tanh(G)
  KernelTable T1;             // K(x-y) cov_b(x-y)
  KernelTable T3;             // K K K times the coincidence-pattern moment
};
GaussianTerms gaussian_terms(const EnsembleSpec& spec, const Grid& grid);

struct TransitionRow {
  double gamma = 0;
  FitResult leading;  // delta T1 + delta^3 T3
  FitResult n1;       // T1 alone
};
struct TransitionScan {
  std::vector<TransitionRow> rows;
  double saturation_gamma = NAN;  // see saturation_gamma()
};
// Smallest scanned gamma from which every larger one has a leading slope within tol of -3d.
double saturation_gamma(const std::vector<TransitionRow>& rows, int dim, double tol = 0.5);
TransitionScan transition_scan(int dim, const std::vector<double>& gammas, double delta, int L, double r_min,
                               double r_max);

}  // namespace hom
