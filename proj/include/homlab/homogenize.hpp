#pragma once

#include <string>
#include <vector>

#include "homlab/corrector.hpp"
#include "homlab/field.hpp"
#include "homlab/fit.hpp"

namespace hom {

// f(X) = sum Re((re + i im) exp(2 pi i k.X)) with X = x / side on the unit torus.
struct FourierMode {
  std::array<int, 3> k{0, 0, 0};
  std::array<double, 3> re{0, 0, 0}, im{0, 0, 0};
};
struct SourceSpec {
  std::vector<FourierMode> modes;
  std::vector<double> explicit_field;  // alternative: vector field on explicit_grid
  Grid explicit_grid;

  int band() const;  // max |k|_inf over modes
  void validate(const Grid& g) const;
  std::vector<double> sample(const Grid& g) const;  // dim blocks of N
};

// Torus of N0/eps sites per side (N0 = cell side); eps must make that an integer multiple of N0.
Grid refined_grid(const Grid& cell, double eps);

struct QuenchedSolution {
  std::vector<double> grad;  // members x d x N
  double residual = 0;
  int iterations = 0;
  double energy_residual = 0;  // |<grad u, a grad u> + <f, grad u>| / <grad u, a grad u>, max over members
};
// -div a grad u = div f on every member; mean-zero gauge.
QuenchedSolution solve_quenched(const Ensemble& e, const std::vector<double>& f, double rtol = 1e-12);
QuenchedSolution solve_quenched(const CoefficientField& a, const std::vector<double>& f, double rtol = 1e-12);

struct AverageSolution {
  std::vector<double> mean;    // d x N
  std::vector<double> stderr_; // empty on exact ensembles
  QuenchedSolution quenched;
};
AverageSolution ensemble_average_solution(const Ensemble& e, const std::vector<double>& f, double rtol = 1e-12);

// grad of u^l = sum_{n<=l} u~^n with m0 u~^1 = -conj(g).f^ and
// m0 u~^n = -sum_{k=2}^{n} i^{k-1} P_k(xi) u~^{n+1-k}; m0 = conj(g)^T abar1 g.
std::vector<double> homogenized_proxy(const TensorSet& t, const Grid& g, const std::vector<double>& f, int ell);

struct RateResult {
  std::vector<double> eps, error;  // relative RMS error of grad E[u] against the proxy
  FitResult fit;                   // slope = fitted order
  bool exact = false;              // all errors at round-off
  std::vector<std::string> notes;
  double order() const { return exact ? INFINITY : fit.slope; }
};
RateResult error_rate(const Ensemble& cell, const TensorSet& t, const SourceSpec& f, const std::vector<double>& eps,
                      int ell);

// || grad u - grad(u^l + sum_n phi^n . d^n u^l) || / || grad u ||, RMS over sites and ensemble,
// correctors from the massive stack at `mu` on the cell, l in {1, 2}.
struct TwoScaleResult {
  double residual = 0;
  double grad_norm = 0;
  double bound = 0;  // ||grad u|| + sum ||psi^n|| ||d^n u^l|| (triangle sanity bound, relative)
  double mu = 0;
};
TwoScaleResult two_scale_residual(const Ensemble& cell, const TensorSet& t, const SourceSpec& f, double eps, int ell,
                                  double mu = 1e-6);

struct SchurResult {
  double homogenized_residual = 0;  // (i)
  double fluctuation_residual = 0;  // (ii)
  bool regularized = false;
  int modes = 0;
};
// Both identities of the Schur-complement representation on the ensemble torus (eps = 1).
SchurResult verify_schur(const Ensemble& e, const SourceSpec& f);

}  // namespace hom
