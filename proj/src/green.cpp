#include "homlab/green.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Dense>

#include "homlab/fft.hpp"
#include "homlab/lattice.hpp"

namespace hom {

double bump_cutoff(double r, double xi_max) {
  const double s = r / xi_max;
  if (s >= 1) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - s * s));
}

void GreenConfig::validate() const {
  if (dim < 1 || dim > 3) throw ConfigError("green: dimension must be 1, 2 or 3");
  if (order() == 0 && dim < 3) throw ParameterError("green: the Green function itself needs d >= 3 (use a derivative)");
  for (int a = dim; a < 3; ++a)
    if (alpha[a] != 0) throw ParameterError("green: derivative index outside the dimension");
  if (!(xi_max > 0)) throw ParameterError("green: cutoff radius must be positive");
  if (xi_max > M_PI) throw ParameterError("green: cutoff support exceeds the symbol coverage (|xi| <= pi)");
  if (ell < 1 || ell > 2 * dim) throw ParameterError("green: correction order must lie in [1, 2d]");
  if (sides.empty() || sides.size() > 2) throw ParameterError("green: one or two grid sides");
  for (int s : sides)
    if (s < 8) throw ParameterError("green: grid side too small");
  if (sides.size() == 2 && sides[0] <= sides[1]) throw ParameterError("green: first grid side must be the finer one");
}

std::vector<cplx> refine_symbol(const SymbolTable& t, const Grid& fine) {
  const Grid& c = t.grid;
  const int d = c.dim();
  if (fine.dim() != d) throw ParameterError("refine_symbol: dimension mismatch");
  for (int a = 0; a < d; ++a)
    if (fine.side(a) < c.side(a) + 1) throw ParameterError("refine_symbol: target grid must be finer");
  const std::size_t Nc = c.size(), Nf = fine.size();
  std::vector<cplx> ker(t.A.size());
  for (int k = 0; k < d * d; ++k)
    for (std::size_t f = 0; f < Nc; ++f) ker[k * Nc + f] = t.A[f * d * d + k];
  Fft(c, d * d).inverse(ker.data());
  double scale = 0;
  for (auto v : ker) scale = std::max(scale, std::abs(v));
  for (auto& v : ker)
    if (std::abs(v) < 1e-15 * scale) v = 0;  // drop round-off so constant symbols stay exact

  std::vector<cplx> out(Nf * d * d, 0.0);
  for (std::size_t z = 0; z < Nc; ++z) {
    Site m = c.min_image(c.coords(z));
    // Nyquist entries are split between +n/2 and -n/2
    std::vector<std::pair<Site, double>> images{{m, 1.0}};
    for (int a = 0; a < d; ++a)
      if (c.side(a) % 2 == 0 && std::abs(m[a]) * 2 == c.side(a)) {
        std::vector<std::pair<Site, double>> next;
        for (auto [s, w] : images) {
          Site p = s, q = s;
          p[a] = c.side(a) / 2;
          q[a] = -c.side(a) / 2;
          next.push_back({p, 0.5 * w});
          next.push_back({q, 0.5 * w});
        }
        images = next;
      }
    for (auto& [s, w] : images) {
      const std::size_t fz = fine.index(s);
      for (int k = 0; k < d * d; ++k) out[k * Nf + fz] += w * ker[k * Nc + z];
    }
  }
  Fft(fine, d * d).forward(out.data());
  std::vector<cplx> A(Nf * d * d);
  for (int k = 0; k < d * d; ++k)
    for (std::size_t f = 0; f < Nf; ++f) A[f * d * d + k] = out[k * Nf + f];
  return A;
}

namespace {

struct OneGrid {
  Grid grid;
  std::vector<std::vector<double>> fields;  // G, Gbar, Gell, tilde...
  std::vector<double> imag;
  std::vector<double> m, m0;
  double margin = INFINITY;
};

// x^T B x / (2 d V): the torus background left by dropping the zero mode.
std::vector<double> background(const Grid& g, const Mat3& a, const Site& alpha) {
  const int d = g.dim();
  Eigen::MatrixXd M(d, d);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) M(j, k) = a[j * d + k];
  const Eigen::MatrixXd B = M.inverse();
  const std::size_t N = g.size();
  std::vector<double> p(N);
  const double V = static_cast<double>(N);
  for (std::size_t i = 0; i < N; ++i) {
    Site x = g.min_image(g.coords(i));
    double s = 0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) s += x[j] * B(j, k) * x[k];
    p[i] = s / (2 * d * V);
  }
  std::vector<double> tmp(N);
  for (int a = 0; a < d; ++a)
    for (int r = 0; r < alpha[a]; ++r) {
      for (std::size_t i = 0; i < N; ++i) tmp[i] = p[g.shift(i, a, 1)] - p[i];
      p.swap(tmp);
    }
  return p;
}

OneGrid evaluate(const SymbolTable* sym, const TensorSet& t, const GreenConfig& cfg, int side, double C0) {
  const int d = cfg.dim;
  Site sides{1, 1, 1};
  for (int a = 0; a < d; ++a) sides[a] = side;
  OneGrid o;
  o.grid = Grid(d, sides);
  const Grid& g = o.grid;
  const std::size_t N = g.size();
  const auto& ds = unshifted_symbol(g);
  const int ell = cfg.ell;
  const Mat3 a1 = t.a1();
  std::vector<cplx> A;
  if (sym) A = refine_symbol(*sym, g);

  const int nf = 3 + ell;  // G, Gbar, Gell, tilde_1..ell
  std::vector<std::vector<cplx>> buf(nf, std::vector<cplx>(N, 0.0));
  o.m.assign(sym ? N : 0, 0.0);
  o.m0.assign(N, 0.0);
  const cplx I(0, 1);
  for (std::size_t i = 0; i < N; ++i) {
    const Freq xi = g.frequency(i);
    double r2 = 0;
    for (int a = 0; a < d; ++a) r2 += xi[a] * xi[a];
    double m0 = 0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) m0 += (std::conj(ds.g[j][i]) * a1[j * d + k] * ds.g[k][i]).real();
    o.m0[i] = m0;
    double m = 0;
    if (sym) {
      cplx mc = 0;
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) mc += std::conj(ds.g[j][i]) * A[i * d * d + j * d + k] * ds.g[k][i];
      m = mc.real();
      o.m[i] = m;
    }
    if (i == 0) continue;  // zero mode excluded
    const double chi = bump_cutoff(std::sqrt(r2), cfg.xi_max);
    if (chi == 0) continue;
    if (sym) o.margin = std::min(o.margin, m / ds.g2[i] - 1.0 / C0);
    cplx ga = chi;
    for (int a = 0; a < d; ++a)
      for (int r = 0; r < cfg.alpha[a]; ++r) ga *= ds.g[a][i];
    std::vector<cplx> T(ell + 1, 0.0);
    T[1] = 1.0 / m0;
    for (int n = 2; n <= ell; ++n) {
      cplx s = 0;
      for (int k = 2; k <= n; ++k) s += std::pow(I, k - 1) * t.P(k, xi) * T[n + 1 - k];
      T[n] = -s / m0;
    }
    if (sym) buf[0][i] = ga * (1.0 / m);  // same rounding as the homogenized route
    buf[1][i] = ga * T[1];
    for (int n = 1; n <= ell; ++n) {
      buf[2][i] += ga * T[n];
      buf[2 + n][i] = ga * T[n];
    }
  }
  Fft fft(g, 1);
  o.fields.resize(nf);
  o.imag.assign(nf, 0.0);
  Mat3 aG = a1;
  if (sym)
    for (int k = 0; k < d * d; ++k) aG[k] = 0.5 * (A[k].real() + A[(k % d) * d + k / d].real());
  const auto bg_bar = cfg.order() <= 2 ? background(g, a1, cfg.alpha) : std::vector<double>(N, 0.0);
  const auto bg_G = sym && cfg.order() <= 2 ? background(g, aG, cfg.alpha) : bg_bar;
  for (int f = 0; f < nf; ++f) {
    if (f == 0 && !sym) continue;
    fft.inverse(buf[f].data());
    o.fields[f].resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      o.fields[f][i] = buf[f][i].real();
      o.imag[f] = std::max(o.imag[f], std::abs(buf[f][i].imag()));
    }
    const std::vector<double>* bg = f == 0 ? &bg_G : (f <= 3 ? &bg_bar : nullptr);
    if (bg)
      for (std::size_t i = 0; i < N; ++i) o.fields[f][i] -= (*bg)[i];
    buf[f].clear();
    buf[f].shrink_to_fit();
  }
  return o;
}

// Two-grid Richardson with assumed order p. With constant_mode the leading error is a
// site-independent offset (zero-mode removal), so the error bar is the spatial
// variation of the correction rather than its size.
GreenField combine(const OneGrid& fine, const OneGrid* coarse, const std::vector<double>& vf,
                   const std::vector<double>* vc, double imag, double order, bool constant_mode = false) {
  GreenField out;
  out.value = vf;
  out.max_imag = imag;
  out.richardson_order = order;
  const std::size_t N = fine.grid.size();
  if (!coarse || !vc) {
    out.error.assign(N, 0.0);
    return out;
  }
  const double rho = double(fine.grid.side(0)) / coarse->grid.side(0);
  const double den = std::pow(rho, order) - 1;
  out.error.assign(N, INFINITY);
  const int hc = coarse->grid.side(0) / 2;
  const double corr0 = (vf[0] - (*vc)[0]) / den;
  for (std::size_t i = 0; i < N; ++i) {
    Site x = fine.grid.min_image(fine.grid.coords(i));
    bool inside = true;
    for (int a = 0; a < fine.grid.dim(); ++a) inside = inside && std::abs(x[a]) < hc;
    if (!inside) continue;
    const double c = (*vc)[coarse->grid.index(x)];
    const double corr = (vf[i] - c) / den;
    out.value[i] = vf[i] + corr;
    out.error[i] = constant_mode ? std::abs(corr - corr0) : std::abs(corr);
  }
  return out;
}

GreenTable build(const SymbolTable* sym, const TensorSet& t, const GreenConfig& cfg, double C0) {
  cfg.validate();
  if (t.dim != cfg.dim) throw ParameterError("green: tensor dimension mismatch");
  if (cfg.ell > t.ell) throw ParameterError("green: correction order exceeds the available tensor order");
  if (sym && sym->grid.dim() != cfg.dim) throw ParameterError("green: symbol dimension mismatch");
  OneGrid f = evaluate(sym, t, cfg, cfg.sides[0], C0);
  std::unique_ptr<OneGrid> c;
  if (cfg.sides.size() == 2) c = std::make_unique<OneGrid>(evaluate(sym, t, cfg, cfg.sides[1], C0));
  GreenTable out;
  out.config = cfg;
  out.grid = f.grid;
  const int d = cfg.dim, a = cfg.order();
  const double pg = d - 2 + a;
  auto field = [&](int k, double order) {
    return combine(f, c.get(), f.fields[k], c ? &c->fields[k] : nullptr, f.imag[k], order, a == 0 && k <= 3);
  };
  auto diff = [&](int k) {
    std::vector<double> vf(f.fields[0].size()), vc;
    for (std::size_t i = 0; i < vf.size(); ++i) vf[i] = f.fields[0][i] - f.fields[k][i];
    if (c) {
      vc.resize(c->fields[0].size());
      for (std::size_t i = 0; i < vc.size(); ++i) vc[i] = c->fields[0][i] - c->fields[k][i];
    }
    // degree-0 symbol at the origin (for a = 0): the dropped zero mode costs a constant h^d
    return combine(f, c.get(), vf, c ? &vc : nullptr, std::max(f.imag[0], f.imag[k]), a == 0 ? d : d - 1 + a, a == 0);
  };
  if (sym) {
    out.G = field(0, pg);
    out.diff_bar = diff(1);
    out.diff_ell = diff(2);
    out.m = std::move(f.m);
    out.ellipticity_margin = f.margin;
  }
  out.Gbar = field(1, pg);
  out.Gell = field(2, pg);
  for (int n = 1; n <= cfg.ell; ++n) out.tilde.push_back(field(2 + n, d - 3 + n + a));
  out.m0 = std::move(f.m0);
  if (!c) out.notes.push_back("single grid: no two-grid error bar");
  return out;
}

}  // namespace

GreenTable annealed_green(const SymbolTable& sym, const TensorSet& t, const GreenConfig& cfg, double C0) {
  return build(&sym, t, cfg, C0);
}

GreenTable homogenized_green_corrections(const TensorSet& t, const GreenConfig& cfg) {
  return build(nullptr, t, cfg, 1.0);
}

FitResult green_decay_fit(const Grid& grid, const GreenField& f, double r_min, double r_max) {
  if (f.value.size() != grid.size()) throw ParameterError("green_decay_fit: empty field");
  return fit_decay_exponent(grid, f.value, f.error, r_min, r_max);
}

}  // namespace hom
