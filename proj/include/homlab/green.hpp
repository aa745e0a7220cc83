#pragma once

#include <vector>

#include "homlab/corrector.hpp"
#include "homlab/fit.hpp"
#include "homlab/series.hpp"

namespace hom {

// Smooth compactly supported radial bump exp(1 - 1/(1 - s^2)), s = |xi|/xi_max.
double bump_cutoff(double xi_norm, double xi_max);

struct GreenConfig {
  int dim = 3;
  double xi_max = 2.5;                 // cutoff support radius, must stay inside (-pi, pi]^d
  Site alpha{0, 0, 0};                 // lattice derivative multi-index (forward differences)
  int ell = 1;                         // correction order for the G^l field
  std::vector<int> sides{128, 96};     // fine and coarse grid sides (two-grid error bar)
  int order() const { return alpha[0] + alpha[1] + alpha[2]; }
  void validate() const;
};

// A field on the fine grid, extrapolated from the two grid densities.
struct GreenField {
  std::vector<double> value;
  std::vector<double> error;    // two-grid Richardson estimate
  double max_imag = 0;
  double richardson_order = 0;  // assumed algebraic order in the frequency spacing
};

struct GreenTable {
  GreenConfig config;
  Grid grid;                    // fine spatial grid
  GreenField G;                 // chi * grad^alpha of the annealed Green function
  GreenField Gbar;              // same for the homogenized Green function (l = 1)
  GreenField Gell;              // corrected homogenized Green function G^l
  GreenField diff_bar;          // chi * grad^alpha (G - Gbar)
  GreenField diff_ell;          // chi * grad^alpha (G - G^l)
  std::vector<GreenField> tilde;  // individual corrections, index n-1
  std::vector<double> m, m0;    // on the fine frequency grid (m empty without a symbol)
  double ellipticity_margin = 0;  // min over the cutoff support of m/|g|^2 - 1/C0
  std::vector<std::string> notes;
};

// Trigonometric interpolation of a full-zone symbol table onto another frequency grid
// (zero-padding of the symbol kernel). Returns N x d x d values on `fine`.
std::vector<cplx> refine_symbol(const SymbolTable& t, const Grid& fine);

GreenTable annealed_green(const SymbolTable& sym, const TensorSet& t, const GreenConfig& cfg, double C0 = 1.0);
// Homogenized fields only (G and the differences stay empty).
GreenTable homogenized_green_corrections(const TensorSet& t, const GreenConfig& cfg);

// Radial-shell maximum fit of one table field over [r_min, r_max].
FitResult green_decay_fit(const Grid& grid, const GreenField& f, double r_min, double r_max);

}  // namespace hom
