#include "homlab/series.hpp"

#include <limits>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "homlab/fft.hpp"
#include "homlab/solver.hpp"

namespace hom {

std::vector<double> KernelTable::site_norms() const {
  const int dd = dim() * dim();
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0;
    for (int c = 0; c < dd; ++c) s += sq(value[i * dd + c]);
    out[i] = std::sqrt(s);
  }
  return out;
}

std::vector<double> KernelTable::site_errors() const {
  if (stderr_.empty()) return {};
  const int dd = dim() * dim();
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0;
    for (int c = 0; c < dd; ++c) s += sq(stderr_[i * dd + c]);
    out[i] = std::sqrt(s);
  }
  return out;
}

namespace {

// Per-site weighted mean over members (n entries per member), compensated.
std::vector<double> member_mean(const Ensemble& e, const double* data, std::size_t n) {
  std::vector<double> out(n, 0.0), comp(n, 0.0);
  for (std::size_t m = 0; m < e.members; ++m) {
    const double w = e.weights[m];
    const double* p = data + m * n;
    for (std::size_t i = 0; i < n; ++i) {
      double y = w * p[i] - comp[i];
      double t = out[i] + y;
      comp[i] = (t - out[i]) - y;
      out[i] = t;
    }
  }
  return out;
}

}  // namespace

std::vector<KernelTable> term_kernels(const Ensemble& e, int n_max, const Site& y) {
  if (!e.normalized || e.b.empty()) throw ParameterError("term kernels need a normalized ensemble");
  if (n_max < 1) throw ParameterError("term order must be >= 1");
  const Grid& g = e.grid;
  const std::size_t N = g.size(), M = e.members;
  const int d = g.dim();
  const std::size_t n = N * d;
  const std::size_t ys = g.index(y);
  std::vector<KernelTable> out(n_max);
  for (int k = 0; k < n_max; ++k) {
    out[k].grid = g;
    out[k].order = k + 1;
    out[k].source = y;
    out[k].value.assign(N * d * d, 0.0);
    if (!e.exact) out[k].stderr_.assign(N * d * d, 0.0);
    out[k].ensemble = e.label;
  }
  std::vector<double> u(M * n), t(M * n);
  for (int col = 0; col < d; ++col) {
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t m = 0; m < M; ++m) u[m * n + col * N + ys] = 1.0;
    for (int s = 0; s <= n_max; ++s) {
      for (std::size_t m = 0; m < M; ++m) apply_coeff(e.b_of(m), u.data() + m * n, t.data() + m * n, N, d, e.scalar);
      auto mean = member_mean(e, t.data(), n);
      if (s >= 1) {
        KernelTable& kt = out[s - 1];
        for (int j = 0; j < d; ++j)
          for (std::size_t x = 0; x < N; ++x) kt.value[x * d * d + j * d + col] = mean[j * N + x];
        if (!e.exact && M > 1) {
          for (int j = 0; j < d; ++j)
            for (std::size_t x = 0; x < N; ++x) {
              double v = 0;
              for (std::size_t m = 0; m < M; ++m) v += sq(t[m * n + j * N + x] - mean[j * N + x]);
              kt.stderr_[x * d * d + j * d + col] = std::sqrt(v / (M - 1) / M);
            }
        }
      }
      if (s == n_max) break;
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i < n; ++i) t[m * n + i] -= mean[i];
      apply_K(g, t.data(), u.data(), M);
    }
  }
  return out;
}

KernelTable term_kernel(const Ensemble& e, int n, const Site& y) { return term_kernels(e, n, y).back(); }

KernelTable bcal_kernel(const Ensemble& e, double delta, int N, const Site& y, double tol) {
  if (delta >= 1) throw NumericalError("Neumann series diverges for delta >= 1");
  if (delta < 0) throw ParameterError("delta must be nonnegative");
  const Grid& g = e.grid;
  const int d = g.dim();
  KernelTable out;
  out.grid = g;
  out.source = y;
  out.ensemble = e.label;
  out.value.assign(g.size() * d * d, 0.0);
  if (delta == 0) {
    out.order = -std::max(N, 1);
    return out;
  }
  if (N <= 0) N = std::max(1, static_cast<int>(std::ceil(std::log(tol) / std::log(delta))));
  out.order = -N;
  out.truncation_bound = std::pow(delta, N + 1) / (1 - delta);
  auto terms = term_kernels(e, N, y);
  // sum from the smallest term up
  for (int n = N; n >= 1; --n) {
    const double c = std::pow(-delta, n);
    for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] += c * terms[n - 1].value[i];
  }
  if (!e.exact) {
    out.stderr_.assign(out.value.size(), 0.0);
    for (int n = 1; n <= N; ++n) {
      const double c = std::pow(delta, n);
      for (std::size_t i = 0; i < out.value.size(); ++i) out.stderr_[i] += c * terms[n - 1].stderr_[i];
    }
  }
  return out;
}

SymbolPoint symbol_exact(const Ensemble& e, const Freq& xi, bool keep_fields, double rtol, int max_iter) {
  const Grid& g = e.grid;
  const std::size_t N = g.size(), M = e.members;
  const int d = g.dim();
  const std::size_t n = N * d;
  SymbolPoint res;
  res.xi = xi;
  res.A.assign(d * d, 0.0);

  double cbar = 0;
  for (std::size_t s = 0; s < M * N; ++s)
    for (int j = 0; j < d; ++j) cbar += e.a[s * d * d + j * d + j];
  cbar /= double(M * N * d);

  DiffSymbol sym(g, xi);
  Fft fft(g, M);
  std::vector<cplx> grad(M * n), flux(M * n);

  auto perp = [&](cplx* v, std::size_t comps) { e.project_perp(v, comps); };
  double mu = 0;
  auto A = [&](const cplx* x, cplx* y) {
    std::copy(x, x + M * N, y);
    perp(y, 1);
    gradient(g, y, grad.data(), xi, M);
    for (std::size_t m = 0; m < M; ++m)
      apply_coeff(e.a_of(m), grad.data() + m * n, flux.data() + m * n, N, d, e.scalar);
    divergence(g, flux.data(), y, xi, M);
    for (std::size_t i = 0; i < M * N; ++i) y[i] = -y[i];
    perp(y, 1);
    if (mu > 0)
      for (std::size_t i = 0; i < M * N; ++i) y[i] += mu * x[i];
  };
  auto Minv = [&](const cplx* r, cplx* z) {
    std::copy(r, r + M * N, z);
    fft.forward(z);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < N; ++i) {
        double den = cbar * (mu + sym.g2[i]);
        z[m * N + i] = den > 1e-14 ? z[m * N + i] / den : cplx(0);
      }
    fft.inverse(z);
    perp(z, 1);
  };
  auto dot = [&](const cplx* a, const cplx* b) {
    CompensatedSum<cplx> s;
    for (std::size_t m = 0; m < M; ++m) {
      cplx acc = 0;
      for (std::size_t i = 0; i < N; ++i) acc += std::conj(a[m * N + i]) * b[m * N + i];
      s.add(e.weights[m] * acc);
    }
    return s.value();
  };

  if (keep_fields) {
    res.psi.assign(M * d * n, 0.0);
    res.chi.assign(M * d * N, 0.0);
  }
  std::vector<cplx> rhs(M * N), chi;
  for (int k = 0; k < d; ++k) {
    for (std::size_t m = 0; m < M; ++m) {
      const double* am = e.a_of(m);
      for (int j = 0; j < d; ++j)
        for (std::size_t i = 0; i < N; ++i) flux[m * n + j * N + i] = am[i * d * d + j * d + k];
    }
    perp(flux.data(), d);
    divergence(g, flux.data(), rhs.data(), xi, M);
    perp(rhs.data(), 1);
    chi.assign(M * N, 0.0);
    mu = 0;
    std::function<void(const cplx*, cplx*)> fA = A, fM = Minv;
    std::function<cplx(const cplx*, const cplx*)> fd = dot;
    CgResult cg = pcg<cplx>(fA, fM, fd, rhs, chi, rtol, max_iter);
    if (!cg.converged) {
      mu = 1e-10;
      res.regularized = true;
      res.mu = mu;
      chi.assign(M * N, 0.0);
      cg = pcg<cplx>(fA, fM, fd, rhs, chi, rtol, max_iter);
      if (!cg.converged)
        throw IterationLimit("symbol_exact: projected cell problem did not converge", cg.relative_residual);
    }
    res.residual = std::max(res.residual, cg.relative_residual);
    res.iterations += cg.iterations;
    gradient(g, chi.data(), grad.data(), xi, M);
    for (std::size_t m = 0; m < M; ++m) {
      cplx* gm = grad.data() + m * n;
      for (std::size_t i = 0; i < N; ++i) gm[k * N + i] += 1.0;
      apply_coeff(e.a_of(m), gm, flux.data() + m * n, N, d, e.scalar);
      for (std::size_t i = 0; i < N; ++i) gm[k * N + i] -= 1.0;
    }
    for (int j = 0; j < d; ++j) {
      CompensatedSum<cplx> s;
      for (std::size_t m = 0; m < M; ++m) {
        CompensatedSum<cplx> sm;
        for (std::size_t i = 0; i < N; ++i) sm.add(flux[m * n + j * N + i]);
        s.add(e.weights[m] * sm.value());
      }
      res.A[j * d + k] = s.value() / double(N);
    }
    if (keep_fields) {
      for (std::size_t m = 0; m < M; ++m) {
        std::copy(grad.begin() + m * n, grad.begin() + (m + 1) * n, res.psi.begin() + (m * d + k) * n);
        std::copy(chi.begin() + m * N, chi.begin() + (m + 1) * N, res.chi.begin() + (m * d + k) * N);
      }
    }
  }
  return res;
}

void diagnose(SymbolTable& t, double C0) {
  const Grid& g = t.grid;
  const int d = g.dim();
  const std::size_t N = g.size();
  const auto& sym = unshifted_symbol(g);
  t.max_imag = t.hermitian_residual = t.conjugate_residual = t.max_imag_m = 0;
  t.ellipticity_margin = t.bound_margin = INFINITY;
  for (std::size_t f = 0; f < N; ++f) {
    Eigen::MatrixXcd A(d, d);
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        A(j, k) = t.at(f, j, k);
        t.max_imag = std::max(t.max_imag, std::abs(A(j, k).imag()));
      }
    t.hermitian_residual = std::max(t.hermitian_residual, (A - A.adjoint()).cwiseAbs().maxCoeff());
    Site c = g.coords(f);
    std::size_t fm = g.index({-c[0], -c[1], -c[2]});
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        t.conjugate_residual = std::max(t.conjugate_residual, std::abs(t.at(fm, j, k) - std::conj(A(j, k))));
    if (sym.g2[f] > 0) {
      cplx m = 0;
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) m += std::conj(sym.g[j][f]) * A(j, k) * sym.g[k][f];
      t.max_imag_m = std::max(t.max_imag_m, std::abs(m.imag()) / sym.g2[f]);
    }
    Eigen::MatrixXcd H = 0.5 * (A + A.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
    t.ellipticity_margin = std::min(t.ellipticity_margin, es.eigenvalues().minCoeff() - 1.0 / C0);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(A);
    t.bound_margin = std::min(t.bound_margin, std::pow(C0, 3) - svd.singularValues()(0));
  }
}

SymbolTable symbol_table_exact(const Ensemble& e, double rtol) { return symbol_table_bloch(e, e.grid, rtol); }

SymbolTable symbol_table_bloch(const Ensemble& e, const Grid& freq, double rtol) {
  if (freq.dim() != e.dim()) throw ParameterError("frequency grid dimension does not match the ensemble");
  SymbolTable t;
  t.grid = freq;
  const int d = e.dim();
  const std::size_t N = freq.size();
  t.A.assign(N * d * d, 0.0);
  std::vector<char> done(N, 0);
  for (std::size_t f = 0; f < N; ++f) {
    if (done[f]) continue;
    auto p = symbol_exact(e, freq.frequency(f), false, rtol);
    std::copy(p.A.begin(), p.A.end(), t.A.begin() + f * d * d);
    t.regularized = t.regularized || p.regularized;
    done[f] = 1;
    Site c = freq.coords(f);
    const std::size_t fm = freq.index({-c[0], -c[1], -c[2]});
    if (!done[fm]) {
      for (int k = 0; k < d * d; ++k) t.A[fm * d * d + k] = std::conj(p.A[k]);
      done[fm] = 1;
    }
  }
  diagnose(t, e.C0);
  return t;
}

SymbolTable symbol_from_kernel(const KernelTable& k, double delta) {
  const Grid& g = k.grid;
  const int d = g.dim();
  const std::size_t N = g.size();
  std::vector<cplx> buf(N * d * d);
  // translate so that the source sits at the origin
  const std::size_t ys = g.index(k.source);
  for (int c = 0; c < d * d; ++c)
    for (std::size_t z = 0; z < N; ++z) buf[c * N + z] = k.value[g.offset(ys, g.coords(z)) * d * d + c];
  Fft fft(g, d * d);
  fft.forward(buf.data());
  SymbolTable t;
  t.grid = g;
  t.A.assign(N * d * d, 0.0);
  for (std::size_t f = 0; f < N; ++f)
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < d; ++l)
        t.A[f * d * d + j * d + l] = (j == l ? 1.0 : 0.0) + delta * buf[(j * d + l) * N + f];
  return t;
}

KernelTable kernel_from_symbol(const SymbolTable& t, double delta, double* max_imag) {
  if (delta <= 0) throw ParameterError("kernel_from_symbol needs delta > 0");
  const Grid& g = t.grid;
  const int d = g.dim();
  const std::size_t N = g.size();
  std::vector<cplx> buf(N * d * d);
  for (std::size_t f = 0; f < N; ++f)
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < d; ++l)
        buf[(j * d + l) * N + f] = (t.at(f, j, l) - (j == l ? 1.0 : 0.0)) / delta;
  Fft fft(g, d * d);
  fft.inverse(buf.data());
  KernelTable k;
  k.grid = g;
  k.order = 0;
  k.value.assign(N * d * d, 0.0);
  double mi = 0;
  for (std::size_t z = 0; z < N; ++z)
    for (int c = 0; c < d * d; ++c) {
      k.value[z * d * d + c] = buf[c * N + z].real();
      mi = std::max(mi, std::abs(buf[c * N + z].imag()));
    }
  if (max_imag) *max_imag = mi;
  return k;
}

KernelTable pairing_kernel_n3(const Grid& g) {
  const int d = g.dim();
  const std::size_t N = g.size();
  const auto K = K_kernel(g);
  KernelTable out;
  out.grid = g;
  out.order = 3;
  out.value.assign(N * d * d, 0.0);
  out.ensemble = "iid +-1 pairing";
  for (std::size_t z = 0; z < N; ++z) {
    Site c = g.coords(z);
    std::size_t zm = g.index({-c[0], -c[1], -c[2]});
    Eigen::MatrixXd A(d, d), B(d, d);
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        A(j, k) = K[(j * d + k) * N + z];
        B(j, k) = K[(j * d + k) * N + zm];
      }
    Eigen::MatrixXd P = A * B * A;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) out.value[z * d * d + j * d + k] = P(j, k);
  }
  return out;
}

MehlerTanh::MehlerTanh(int terms) {
  // trapezoid quadrature against the standard normal density; spectrally accurate here
  const double X = 16, h = 0.004;
  const int P = static_cast<int>(2 * X / h) + 1;
  std::vector<double> a(terms + 1, 0.0), b(terms + 1, 0.0);
  const double norm = 1.0 / std::sqrt(2 * M_PI);
  CompensatedSum<double> m2;
  for (int p = 0; p < P; ++p) {
    const double x = -X + p * h, w = h * norm * std::exp(-0.5 * x * x);
    const double t = std::tanh(x);
    m2.add(w * t * t);
    double hm1 = 0, h0 = 1;
    for (int n = 0; n <= terms; ++n) {
      a[n] += w * t * h0;
      b[n] += w * t * t * h0;
      double h1 = (x * h0 - std::sqrt(double(n)) * hm1) / std::sqrt(double(n + 1));
      hm1 = h0;
      h0 = h1;
    }
  }
  m2_ = m2.value();
  odd_.assign(terms + 1, 0.0);
  even_.assign(terms + 1, 0.0);
  for (int n = 0; n <= terms; ++n) {
    if (n % 2) odd_[n] = a[n] * a[n];
    else even_[n] = b[n] * b[n];
  }
}

double MehlerTanh::cov(double rho) const {
  double s = 0;  // Horner
  for (int n = static_cast<int>(odd_.size()) - 1; n >= 1; --n) s = s * rho + odd_[n];
  return s * rho;
}

double MehlerTanh::pattern_moment(double rho) const {
  double s = 0;
  for (int n = static_cast<int>(even_.size()) - 1; n >= 0; --n) s = s * rho + even_[n];
  return s - sq(cov(rho));
}

namespace {

// K and its n = 3 pairing do not depend on the covariance; scans share them.
GaussianTerms gaussian_terms_with(const EnsembleSpec& spec, const Grid& grid, const std::vector<double>& K,
                                  const KernelTable& P3) {
  if (spec.model != Model::GaussianPowerLaw) throw ConfigError("gaussian_terms requires GaussianPowerLaw");
  spec.validate();
  GaussianTerms gt;
  gt.grid = grid;
  const int d = grid.dim();
  const std::size_t N = grid.size();
  gt.c = gaussian_covariance(spec, grid);
  static const MehlerTanh mehler;
  gt.cov_b.resize(N);
  for (std::size_t i = 0; i < N; ++i) gt.cov_b[i] = i == 0 ? mehler.second_moment() : mehler.cov(gt.c[i]);
  for (KernelTable* t : {&gt.T1, &gt.T3}) {
    t->grid = grid;
    t->value.assign(N * d * d, 0.0);
    t->ensemble = "gaussian deterministic";
  }
  gt.T1.order = 1;
  gt.T3.order = 3;
  // c comes out of an FFT: absolute round-off ~ eps * c(0), which swamps fast-decaying tails
  gt.T1.stderr_.assign(N * d * d, 0.0);
  const double c_floor = 4 * std::numeric_limits<double>::epsilon() * std::abs(gt.c[0]);
  for (std::size_t z = 0; z < N; ++z) {
    const double pm = mehler.pattern_moment(gt.c[z]);
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        gt.T1.stderr_[z * d * d + j * d + k] = std::abs(K[(j * d + k) * N + z]) * c_floor;
        gt.T1.value[z * d * d + j * d + k] = K[(j * d + k) * N + z] * gt.cov_b[z];
        gt.T3.value[z * d * d + j * d + k] = P3.value[z * d * d + j * d + k] * pm;
      }
  }
  return gt;
}

}  // namespace

GaussianTerms gaussian_terms(const EnsembleSpec& spec, const Grid& grid) {
  return gaussian_terms_with(spec, grid, K_kernel(grid), pairing_kernel_n3(grid));
}

double saturation_gamma(const std::vector<TransitionRow>& rows, int dim, double tol) {
  // smallest gamma from which every larger scanned gamma stays within tol of -3d
  std::vector<const TransitionRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->gamma < b->gamma; });
  double sat = NAN;
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    const auto& f = (*it)->leading;
    if (!f.ok() || std::abs(f.slope + 3.0 * dim) > tol) break;
    sat = (*it)->gamma;
  }
  return sat;
}

TransitionScan transition_scan(int dim, const std::vector<double>& gammas, double delta, int L, double r_min,
                               double r_max) {
  TransitionScan scan;
  const Grid grid = Grid::cube(dim, L);
  const auto K = K_kernel(grid);
  const auto P3 = pairing_kernel_n3(grid);
  for (double gamma : gammas) {
    EnsembleSpec spec;
    spec.model = Model::GaussianPowerLaw;
    spec.dim = dim;
    spec.gamma = gamma;
    spec.delta = delta;
    auto gt = gaussian_terms_with(spec, grid, K, P3);
    KernelTable lead = gt.T1;
    for (std::size_t i = 0; i < lead.value.size(); ++i) {
      lead.value[i] = delta * gt.T1.value[i] + std::pow(delta, 3) * gt.T3.value[i];
      lead.stderr_[i] = delta * gt.T1.stderr_[i];
    }
    TransitionRow row;
    row.gamma = gamma;
    row.leading = fit_decay_exponent(grid, lead.site_norms(), lead.site_errors(), r_min, r_max);
    row.n1 = fit_decay_exponent(grid, gt.T1.site_norms(), gt.T1.site_errors(), r_min, r_max);
    scan.rows.push_back(row);
  }
  scan.saturation_gamma = saturation_gamma(scan.rows, dim);
  return scan;
}

}  // namespace hom
