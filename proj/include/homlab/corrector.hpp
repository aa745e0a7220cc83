#pragma once

#include <functional>
#include <string>
#include <vector>

#include "homlab/field.hpp"
#include "homlab/lattice.hpp"
#include "homlab/solver.hpp"

namespace hom {

// Massive corrector hierarchy along one direction e (lattice form): for k >= 0,
//   G_k = e 1_{k=0} + grad phi^{k+1} + sum_{m=1}^{k} E_m phi^{k+1-m} / m!
//   (mu - div a grad) phi^{k+1} = P^perp[ div(a (G_k - grad phi^{k+1}))
//                                         - sum_{m=1}^{k} (-1)^m/m! D_m (a G_{k-m}) ]
// with E_m u = (e_j^m u(x+e_j))_j and D_m F = sum_j e_j^m F_j(x-e_j).
// c_k = E[e . a G_k] is the coefficient of (it)^k in e.A(te)e.
struct CorrectorStack {
  Grid grid;
  double mu = 0;
  Freq e{0, 0, 0};
  int n_max = 0;
  std::size_t members = 0;
  std::vector<std::vector<double>> phi;  // phi[n], n = 1..n_max (phi[0] empty): members x N
  std::vector<std::vector<double>> G;    // G[k], k = 0..n_max-1: members x d x N
  std::vector<double> c;                 // c[k]
  std::vector<double> residual;          // per order
  std::vector<int> iterations;
  std::vector<double> mean_drift;        // max |E phi^n| removed by re-centering
};

// Batched PCG for (mu - div a grad) u = f on every member (block diagonal); mu = 0 needs
// per-member mean-zero f and returns the mean-zero solution.
CgResult solve_elliptic(const Ensemble& e, double mu, const std::vector<double>& f, std::vector<double>& u,
                        double rtol = 1e-12, int max_iter = 5000);

CorrectorStack solve_massive_corrector(const Ensemble& e, double mu, const Freq& dir, int n_max, double rtol = 1e-12,
                                       int max_iter = 5000);

// e . abar^n_{e..e} e at the stack's mu (n = 1..n_max).
double homogenized_tensor(const CorrectorStack& s, int n);

struct Extrapolation {
  double value = NAN;
  double error = NAN;
  double order = NAN;  // fitted power of mu
  bool flagged = false;
  std::string note;
};
// Richardson on a geometric mu sequence (any order of input; sorted internally).
Extrapolation extrapolate_mu(const std::vector<double>& mus, const std::vector<double>& values);

// Homogeneous polynomial in d variables.
struct HomPoly {
  int dim = 1, degree = 0;
  std::vector<std::array<int, 3>> exps;
  std::vector<double> coef;
  double eval(const Freq& x) const;
};
std::vector<std::array<int, 3>> monomials(int dim, int degree);

// Unit directions adequate for polarization up to the given degree.
std::vector<Freq> polarization_directions(int dim, int max_degree);

struct TensorSet {
  int dim = 1;
  int ell = 1;                       // orders n = 1..ell
  std::vector<Freq> directions;
  std::vector<std::vector<double>> contracted;  // [dir][n-1]
  std::vector<std::vector<double>> error;       // [dir][n-1]
  std::vector<HomPoly> sym;                     // sym[n-1]: degree n+1
  std::vector<double> fit_residual;             // polarization least-squares residual per order
  std::string route;                            // "massive" | "symbol" | "given"
  double mu = NAN;                              // NaN: extrapolated / not applicable
  std::vector<std::string> notes;

  // sym(abar^n) contracted with xi (n+1 times): P_{n-1}(xi).
  double P(int n, const Freq& xi) const { return sym.at(n - 1).eval(xi); }
  Mat3 a1() const;  // symmetric abar^1 as a matrix
};

// Builds a TensorSet from contracted values (fills the polarization).
TensorSet make_tensor_set(int dim, int ell, std::vector<Freq> dirs, std::vector<std::vector<double>> values,
                          std::vector<std::vector<double>> errors, const std::string& route);
// Constant-coefficient tensor set: abar^1 = a0, higher orders zero.
TensorSet constant_tensors(int dim, const Mat3& a0, int ell);

// Massive route: stacks at each mu, Richardson per direction and order.
TensorSet tensors_massive(const Ensemble& e, int ell, const std::vector<double>& mus = {1e-1, 3e-2, 1e-2, 3e-3, 1e-3},
                          double rtol = 1e-12);

// Symbol route: h(t) = e.A(te)e sampled at t = +-h, +-2h, +-3h; coefficients of a degree-5
// interpolant give c_k = p_k / i^k; truncation estimate from widths h and 2h.
using ContractedSymbol = std::function<cplx(const Freq& xi, const Freq& e)>;
// sample_error: relative accuracy of each h value, propagated through the stencil.
TensorSet tensors_from_symbol(const ContractedSymbol& h, int dim, int ell, double step = 0.05,
                              double sample_error = 1e-13);
TensorSet tensors_from_symbol(const Ensemble& e, int ell, double step = 0.05);

// Weak corrector phi^n_{e..e}(x) conditioned on a|_{B_R0} via freeze-and-resample,
// evaluated through the Neumann series of the projected inverse.
struct WeakCorrectorResult {
  double value = 0;
  double stderr_ = 0;
  int resamples = 0;
  double window_radius = 0;
};
struct WeakCorrectorOptions {
  int resamples = 64;
  int outer_samples = 0;       // 0: unconditional batch size for P^perp equals resamples
  int series_terms = 0;        // 0: ceil(log(1e-12)/log(delta))
  bool control_variate = true;
  std::uint64_t seed = 1;
};
WeakCorrectorResult weak_corrector(const EnsembleSpec& spec, const CoefficientField& frozen, int n, const Freq& dir,
                                   const Site& x, int R0, const WeakCorrectorOptions& opt = {});

}  // namespace hom
