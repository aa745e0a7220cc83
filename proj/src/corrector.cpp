#include "homlab/corrector.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "homlab/fft.hpp"
#include "homlab/series.hpp"
#include "homlab/solver.hpp"

namespace hom {

namespace {

double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace

CgResult solve_elliptic(const Ensemble& e, double mu, const std::vector<double>& f, std::vector<double>& phi,
                       double rtol, int max_iter) {
  const Grid& g = e.grid;
  const std::size_t N = g.size(), M = e.members;
  const int d = g.dim();
  double cbar = 0;
  for (std::size_t s = 0; s < M * N; ++s)
    for (int j = 0; j < d; ++j) cbar += e.a[s * d * d + j * d + j];
  cbar /= double(M * N * d);
  const auto& sym = unshifted_symbol(g);
  std::vector<double> grad(M * N * d), flux(M * N * d);
  std::function<void(const double*, double*)> A = [&](const double* x, double* y) {
    gradient(g, x, grad.data(), M);
    for (std::size_t m = 0; m < M; ++m)
      apply_coeff(e.a_of(m), grad.data() + m * N * d, flux.data() + m * N * d, N, d, e.scalar);
    divergence(g, flux.data(), y, M);
    for (std::size_t i = 0; i < M * N; ++i) y[i] = mu * x[i] - y[i];
  };
  const std::size_t chunk = std::max<std::size_t>(1, std::min<std::size_t>(M, (std::size_t(1) << 21) / N + 1));
  std::vector<cplx> buf(chunk * N);
  std::function<void(const double*, double*)> Minv = [&](const double* r, double* z) {
    for (std::size_t m0 = 0; m0 < M; m0 += chunk) {
      const std::size_t cnt = std::min(chunk, M - m0);
      Fft fft(g, cnt);
      for (std::size_t i = 0; i < cnt * N; ++i) buf[i] = r[m0 * N + i];
      fft.forward(buf.data());
      for (std::size_t m = 0; m < cnt; ++m)
        for (std::size_t i = 0; i < N; ++i) {
          const double den = mu + cbar * sym.g2[i];
          buf[m * N + i] = den > 0 ? buf[m * N + i] / den : cplx(0);
        }
      fft.inverse(buf.data());
      for (std::size_t i = 0; i < cnt * N; ++i) z[m0 * N + i] = buf[i].real();
    }
  };
  std::function<cplx(const double*, const double*)> dot = [&](const double* a, const double* b) {
    CompensatedSum<double> s;
    for (std::size_t m = 0; m < M; ++m) {
      double acc = 0;
      for (std::size_t i = 0; i < N; ++i) acc += a[m * N + i] * b[m * N + i];
      s.add(acc);
    }
    return cplx(s.value());
  };
  return pcg<double>(A, Minv, dot, f, phi, rtol, max_iter);
}

CorrectorStack solve_massive_corrector(const Ensemble& e, double mu, const Freq& dir, int n_max, double rtol,
                                       int max_iter) {
  if (!(mu > 0)) throw ParameterError("massive corrector needs mu > 0");
  if (n_max < 1) throw ParameterError("n_max must be >= 1");
  const Grid& g = e.grid;
  const std::size_t N = g.size(), M = e.members;
  const int d = g.dim();
  const std::size_t n = N * d;
  const auto& nb = neighbors(g);
  CorrectorStack s;
  s.grid = g;
  s.mu = mu;
  s.e = dir;
  s.n_max = n_max;
  s.members = M;
  s.phi.assign(n_max + 1, {});
  s.G.assign(n_max, {});
  std::vector<std::vector<double>> F(n_max);
  std::vector<double> rest(M * n), arest(M * n), rhs(M * N);
  for (int k = 0; k < n_max; ++k) {
    // rest_k = e 1_{k=0} + sum_m E_m phi^{k+1-m} / m!
    std::fill(rest.begin(), rest.end(), 0.0);
    if (k == 0)
      for (std::size_t m = 0; m < M; ++m)
        for (int j = 0; j < d; ++j)
          for (std::size_t i = 0; i < N; ++i) rest[m * n + j * N + i] = dir[j];
    for (int mm = 1; mm <= k; ++mm) {
      const auto& ph = s.phi[k + 1 - mm];
      const double fm = 1.0 / factorial(mm);
      for (int j = 0; j < d; ++j) {
        const double c = std::pow(dir[j], mm) * fm;
        if (c == 0) continue;
        const std::size_t* nx = nb.next[j].data();
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t i = 0; i < N; ++i) rest[m * n + j * N + i] += c * ph[m * N + nx[i]];
      }
    }
    for (std::size_t m = 0; m < M; ++m)
      apply_coeff(e.a_of(m), rest.data() + m * n, arest.data() + m * n, N, d, e.scalar);
    divergence(g, arest.data(), rhs.data(), M);
    // - sum_m (-1)^m/m! D_m F_{k-m}
    for (int mm = 1; mm <= k; ++mm) {
      const auto& Fk = F[k - mm];
      const double fm = (mm % 2 ? 1.0 : -1.0) / factorial(mm);  // -(-1)^m/m!
      for (int j = 0; j < d; ++j) {
        const double c = std::pow(dir[j], mm) * fm;
        if (c == 0) continue;
        const std::size_t* pv = nb.prev[j].data();
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t i = 0; i < N; ++i) rhs[m * N + i] += c * Fk[m * n + j * N + pv[i]];
      }
    }
    e.project_perp(rhs.data(), 1);
    std::vector<double> phi(M * N, 0.0);
    CgResult cg = solve_elliptic(e, mu, rhs, phi, rtol, max_iter);
    if (!cg.converged)
      throw IterationLimit("massive corrector: CG did not converge at order " + std::to_string(k + 1),
                           cg.relative_residual);
    // re-center: E[phi] = 0
    auto mean = e.expect(phi.data(), 1);
    double drift = 0;
    for (double v : mean) drift = std::max(drift, std::abs(v));
    e.project_perp(phi.data(), 1);
    s.mean_drift.push_back(drift);
    s.residual.push_back(cg.relative_residual);
    s.iterations.push_back(cg.iterations);
    // G_k = rest_k + grad phi^{k+1};  F_k = a G_k
    std::vector<double> Gk(M * n);
    gradient(g, phi.data(), Gk.data(), M);
    for (std::size_t i = 0; i < M * n; ++i) Gk[i] += rest[i];
    F[k].resize(M * n);
    for (std::size_t m = 0; m < M; ++m) apply_coeff(e.a_of(m), Gk.data() + m * n, F[k].data() + m * n, N, d, e.scalar);
    CompensatedSum<double> ck;
    for (std::size_t m = 0; m < M; ++m) {
      CompensatedSum<double> sm;
      for (int j = 0; j < d; ++j)
        for (std::size_t i = 0; i < N; ++i) sm.add(dir[j] * F[k][m * n + j * N + i]);
      ck.add(e.weights[m] * sm.value());
    }
    s.c.push_back(ck.value() / double(N));
    s.phi[k + 1] = std::move(phi);
    s.G[k] = std::move(Gk);
  }
  return s;
}

double homogenized_tensor(const CorrectorStack& s, int n) {
  if (n < 1 || n > s.n_max) throw ParameterError("tensor order outside the computed stack");
  return s.c[n - 1];
}

Extrapolation extrapolate_mu(const std::vector<double>& mus, const std::vector<double>& values) {
  if (mus.size() != values.size() || mus.size() < 3) throw ParameterError("extrapolate_mu needs >= 3 (mu, value) pairs");
  std::vector<std::size_t> idx(mus.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mus[a] > mus[b]; });
  std::vector<double> mu, v;
  for (auto i : idx) {
    mu.push_back(mus[i]);
    v.push_back(values[i]);
  }
  const std::size_t K = mu.size();
  // roughly geometric: successive ratios within a factor 1.5 of each other
  for (std::size_t i = 2; i < K; ++i) {
    double r0 = mu[i - 1] / mu[i - 2], r1 = mu[i] / mu[i - 1];
    if (!(mu[i] > 0) || r1 / r0 > 1.5 || r0 / r1 > 1.5)
      throw ParameterError("extrapolate_mu needs a geometric mu sequence");
  }
  // Richardson on the triple ending at index j; returns false if the tail is not monotone.
  auto richardson = [&](std::size_t j, double& value, double& inc, double& order) {
    const double m1 = mu[j - 2], m2 = mu[j - 1], m3 = mu[j];
    const double d1 = v[j - 1] - v[j - 2], d2 = v[j] - v[j - 1];
    if (d1 == 0) return false;
    const double q = d2 / d1;
    if (!(q > 0 && q < 1)) return false;
    auto ratio = [&](double p) { return (std::pow(m2, p) - std::pow(m3, p)) / (std::pow(m1, p) - std::pow(m2, p)); };
    double lo = 1e-3, hi = 8;
    if (q > ratio(lo) || q < ratio(hi)) return false;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      (ratio(mid) > q ? lo : hi) = mid;
    }
    order = 0.5 * (lo + hi);
    const double C = d2 / (std::pow(m3, order) - std::pow(m2, order));
    inc = -C * std::pow(m3, order);
    value = v[j] + inc;
    return true;
  };
  Extrapolation x;
  const double d1 = v[K - 2] - v[K - 3], d2 = v[K - 1] - v[K - 2];
  const double scale = std::max({std::abs(v[K - 1]), std::abs(v[K - 2]), 1e-300});
  if (d1 == 0 && d2 == 0) {
    x.value = v[K - 1];
    x.error = 0;
    x.note = "constant";
    return x;
  }
  if (std::abs(d2) <= 1e-13 * scale) {
    x.value = v[K - 1];
    x.error = std::abs(d2);
    x.note = "converged to round-off";
    return x;
  }
  double val, inc, order;
  if (!richardson(K - 1, val, inc, order)) {
    x.value = v[K - 1];
    x.error = std::abs(d1) + std::abs(d2);
    x.flagged = true;
    x.note = "non-monotone tail: noise-dominated";
    return x;
  }
  x.value = val;
  x.order = order;
  x.error = std::abs(inc);
  double val0, inc0, order0;
  if (K >= 4 && richardson(K - 2, val0, inc0, order0)) x.error = std::max(x.error, std::abs(val0 - val));
  return x;
}

std::vector<std::array<int, 3>> monomials(int dim, int degree) {
  std::vector<std::array<int, 3>> out;
  if (dim == 1) return {{degree, 0, 0}};
  for (int a = degree; a >= 0; --a) {
    if (dim == 2) {
      out.push_back({a, degree - a, 0});
      continue;
    }
    for (int b = degree - a; b >= 0; --b) out.push_back({a, b, degree - a - b});
  }
  return out;
}

double HomPoly::eval(const Freq& x) const {
  double s = 0;
  for (std::size_t i = 0; i < exps.size(); ++i) {
    double t = coef[i];
    for (int a = 0; a < dim; ++a) t *= std::pow(x[a], exps[i][a]);
    s += t;
  }
  return s;
}

std::vector<Freq> polarization_directions(int dim, int max_degree) {
  std::vector<Freq> out;
  if (dim == 1) return {{1, 0, 0}};
  if (dim == 2) {
    const int M = max_degree + 1;
    for (int i = 0; i < M; ++i) out.push_back({std::cos(M_PI * i / M), std::sin(M_PI * i / M), 0});
    return out;
  }
  // Fibonacci points on the upper hemisphere, twice the monomial count
  const int need = 2 * static_cast<int>(monomials(3, max_degree).size());
  const double golden = M_PI * (3 - std::sqrt(5.0));
  for (int i = 0; i < need; ++i) {
    double z = 1 - (i + 0.5) / need;
    double r = std::sqrt(1 - z * z);
    out.push_back({r * std::cos(golden * i), r * std::sin(golden * i), z});
  }
  return out;
}

Mat3 TensorSet::a1() const {
  Mat3 m{};
  const HomPoly& p = sym.at(0);
  for (std::size_t i = 0; i < p.exps.size(); ++i) {
    int a = -1, b = -1;
    for (int k = 0; k < dim; ++k)
      for (int t = 0; t < p.exps[i][k]; ++t) (a < 0 ? a : b) = k;
    if (a == b)
      m[a * dim + a] = p.coef[i];
    else
      m[a * dim + b] = m[b * dim + a] = 0.5 * p.coef[i];
  }
  return m;
}

TensorSet make_tensor_set(int dim, int ell, std::vector<Freq> dirs, std::vector<std::vector<double>> values,
                          std::vector<std::vector<double>> errors, const std::string& route) {
  TensorSet t;
  t.dim = dim;
  t.ell = ell;
  t.directions = std::move(dirs);
  t.contracted = std::move(values);
  t.error = std::move(errors);
  t.route = route;
  for (int nn = 1; nn <= ell; ++nn) {
    HomPoly p;
    p.dim = dim;
    p.degree = nn + 1;
    p.exps = monomials(dim, nn + 1);
    Eigen::MatrixXd A(t.directions.size(), p.exps.size());
    Eigen::VectorXd b(t.directions.size());
    for (std::size_t r = 0; r < t.directions.size(); ++r) {
      for (std::size_t c = 0; c < p.exps.size(); ++c) {
        double v = 1;
        for (int a = 0; a < dim; ++a) v *= std::pow(t.directions[r][a], p.exps[c][a]);
        A(r, c) = v;
      }
      b[r] = t.contracted[r][nn - 1];
    }
    if (A.rows() < A.cols()) throw ParameterError("too few directions for polarization");
    Eigen::VectorXd x = A.colPivHouseholderQr().solve(b);
    p.coef.assign(x.data(), x.data() + x.size());
    t.fit_residual.push_back((A * x - b).norm());
    t.sym.push_back(p);
  }
  return t;
}

TensorSet constant_tensors(int dim, const Mat3& a0, int ell) {
  auto dirs = polarization_directions(dim, ell + 1);
  std::vector<std::vector<double>> vals(dirs.size(), std::vector<double>(ell, 0.0)), errs = vals;
  for (std::size_t r = 0; r < dirs.size(); ++r) {
    double v = 0;
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b) v += dirs[r][a] * a0[a * dim + b] * dirs[r][b];
    vals[r][0] = v;
  }
  TensorSet t = make_tensor_set(dim, ell, dirs, vals, errs, "given");
  // exact coefficients instead of the polarization fit, so constant media carry no round-off
  HomPoly& p = t.sym[0];
  for (std::size_t i = 0; i < p.exps.size(); ++i) {
    int a = -1, b = -1;
    for (int k = 0; k < dim; ++k)
      for (int q = 0; q < p.exps[i][k]; ++q) (a < 0 ? a : b) = k;
    p.coef[i] = a == b ? a0[a * dim + a] : a0[a * dim + b] + a0[b * dim + a];
  }
  return t;
}

TensorSet tensors_massive(const Ensemble& e, int ell, const std::vector<double>& mus, double rtol) {
  if (ell < 1 || ell > 4) throw ParameterError("tensor order must lie in 1..4");
  const int d = e.dim();
  auto dirs = polarization_directions(d, ell + 1);
  std::vector<std::vector<double>> vals(dirs.size(), std::vector<double>(ell)), errs = vals;
  std::vector<std::string> notes;
  for (std::size_t r = 0; r < dirs.size(); ++r) {
    std::vector<std::vector<double>> per_order(ell);
    for (double mu : mus) {
      auto st = solve_massive_corrector(e, mu, dirs[r], ell, rtol);
      for (int k = 0; k < ell; ++k) per_order[k].push_back(st.c[k]);
    }
    // CG stops at relative residual rtol; the massive operator has condition ~ (4d + mu)/mu
    const double mu_min = *std::min_element(mus.begin(), mus.end());
    const double solve_floor = rtol * (4.0 * d + mu_min) / mu_min * std::max(1.0, std::abs(per_order[0].back()));
    for (int k = 0; k < ell; ++k) {
      auto x = extrapolate_mu(mus, per_order[k]);
      vals[r][k] = x.value;
      errs[r][k] = std::max(x.error, solve_floor);
      if (x.flagged) notes.push_back("order " + std::to_string(k + 1) + ": " + x.note);
    }
  }
  auto t = make_tensor_set(d, ell, dirs, vals, errs, "massive");
  t.notes = notes;
  return t;
}

TensorSet tensors_from_symbol(const ContractedSymbol& hfun, int dim, int ell, double step, double sample_error) {
  if (ell < 1 || ell > 4) throw ParameterError("stencil supports tensor orders 1..4 only");
  if (!(step > 0)) throw ParameterError("stencil width must be positive");
  auto dirs = polarization_directions(dim, ell + 1);
  std::vector<std::vector<double>> vals(dirs.size(), std::vector<double>(ell)), errs = vals;
  const int P = 6;
  auto coeffs = [&](const Freq& e, double h) {
    Eigen::MatrixXcd V(P, P);
    Eigen::VectorXcd y(P);
    int row = 0;
    for (int s : {1, 2, 3})
      for (int sign : {1, -1}) {
        double t = sign * s * h;
        for (int k = 0; k < P; ++k) V(row, k) = std::pow(t, k);
        y[row] = hfun({t * e[0], t * e[1], t * e[2]}, e);
        ++row;
      }
    Eigen::MatrixXcd Vinv = V.inverse();
    Eigen::VectorXcd p = Vinv * y;
    double ymax = y.cwiseAbs().maxCoeff();
    std::vector<double> c(P), noise(P);
    for (int k = 0; k < P; ++k) {
      c[k] = (p[k] / std::pow(cplx(0, 1), k)).real();
      // propagated sample error (solver tolerance on each symbol value)
      noise[k] = sample_error * ymax * Vinv.row(k).cwiseAbs().sum();
    }
    return std::make_pair(c, noise);
  };
  for (std::size_t r = 0; r < dirs.size(); ++r) {
    auto [c1, n1] = coeffs(dirs[r], step);
    auto [c2, n2] = coeffs(dirs[r], 2 * step);
    for (int k = 0; k < ell; ++k) {
      vals[r][k] = c1[k];
      errs[r][k] = std::abs(c1[k] - c2[k]) + n1[k] + n2[k];
    }
  }
  return make_tensor_set(dim, ell, dirs, vals, errs, "symbol");
}

TensorSet tensors_from_symbol(const Ensemble& e, int ell, double step) {
  const int d = e.dim();
  ContractedSymbol h = [&](const Freq& xi, const Freq& dir) {
    auto p = symbol_exact(e, xi, false, 1e-13);
    cplx s = 0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) s += dir[j] * p.A[j * d + k] * dir[k];
    return s;
  };
  return tensors_from_symbol(h, d, ell, step, 1e-12);  // residual 1e-13 times a modest condition number
}

WeakCorrectorResult weak_corrector(const EnsembleSpec& spec, const CoefficientField& frozen, int n, const Freq& dir,
                                   const Site& x, int R0, const WeakCorrectorOptions& opt) {
  const Grid& g = frozen.grid;
  const int d = g.dim();
  const std::size_t N = g.size(), nv = N * d;
  const int L = g.side(0);
  if (n < 1 || n >= 2 * d) throw ParameterError("weak corrector order must satisfy 1 <= n < 2d");
  const double r_out = L / 4.0, r_in = 3.0 * L / 16.0;
  const double xr = g.radius(g.min_image(x));
  if (xr + R0 > r_in) throw ParameterError("window too small: |x| + R0 exceeds the polynomial window plateau");
  WeakCorrectorResult res;
  res.window_radius = r_out;
  if (frozen.delta == 0 || frozen.b.empty()) return res;
  const double delta = frozen.delta;
  const int terms = opt.series_terms > 0 ? opt.series_terms
                                         : std::max(2, int(std::ceil(std::log(1e-12) / std::log(delta))));

  // windowed polynomial p(z) = (e.(z-x))^n w(|z-x|), and its lattice gradient
  std::vector<double> p(N), gp(nv);
  for (std::size_t i = 0; i < N; ++i) {
    Site c = g.coords(i);
    Site dz = g.min_image({c[0] - x[0], c[1] - x[1], c[2] - x[2]});
    double r = g.radius(dz), proj = 0;
    for (int a = 0; a < d; ++a) proj += dir[a] * dz[a];
    double w = 1;
    if (r >= r_out) w = 0;
    else if (r > r_in) {
      double s = (r - r_in) / (r_out - r_in);  // smooth step
      w = 0.5 * (1 + std::cos(M_PI * s));
    }
    p[i] = std::pow(proj, n) * w;
  }
  gradient(g, p.data(), gp.data(), 1);

  std::vector<char> inB(N);
  for (std::size_t i = 0; i < N; ++i) inB[i] = g.radius(g.min_image(g.coords(i))) <= R0;

  const std::size_t Bu = opt.outer_samples > 0 ? opt.outer_samples : opt.resamples;
  const std::size_t Bc = opt.resamples, M = Bu + Bc;
  // b fields: unconditional batch then conditional (frozen inside B)
  Ensemble ens = monte_carlo(spec, g, M, opt.seed);
  normalize(ens);
  if (std::abs(ens.delta - delta) > 1e-12) throw ParameterError("frozen field and spec disagree on delta");
  const std::size_t blk = N * d * d;
  for (std::size_t m = Bu; m < M; ++m)
    for (std::size_t i = 0; i < N; ++i)
      if (inB[i]) std::copy(frozen.b.begin() + i * d * d, frozen.b.begin() + (i + 1) * d * d, ens.b.begin() + m * blk + i * d * d);

  const std::size_t xs = g.index(x);
  std::vector<double> s(M * nv), q(M * nv), dv(M * N), phi(M * N), acc(Bc, 0.0);
  for (std::size_t m = 0; m < M; ++m) std::copy(gp.begin(), gp.end(), s.begin() + m * nv);
  // exact first-order conditional term: -delta Delta^{-1} div(b 1_B grad p)
  double first = 0;
  {
    std::vector<double> bq(nv, 0.0), dd(N), ph(N);
    for (std::size_t i = 0; i < N; ++i)
      if (inB[i])
        for (int j = 0; j < d; ++j)
          for (int k = 0; k < d; ++k) bq[j * N + i] += frozen.b[i * d * d + j * d + k] * gp[k * N + i];
    divergence(g, bq.data(), dd.data(), 1);
    solve_poisson(g, dd.data(), ph.data(), 0.0, 1);  // (-Delta) ph = dd
    first = delta * ph[xs];
  }
  for (int k = 0; k <= terms; ++k) {
    for (std::size_t m = 0; m < M; ++m) apply_coeff(ens.b_of(m), s.data() + m * nv, q.data() + m * nv, N, d, ens.scalar);
    if (k >= 1 || !opt.control_variate) {
      // P^perp from the unconditional batch; E[b] = 0 exactly at k = 0
      std::vector<double> mean(nv, 0.0);
      if (k >= 1) {
        for (std::size_t m = 0; m < Bu; ++m)
          for (std::size_t i = 0; i < nv; ++i) mean[i] += q[m * nv + i];
        for (auto& v : mean) v /= double(Bu);
      }
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i < nv; ++i) q[m * nv + i] -= mean[i];
      // Phi contribution: -delta Delta^{-1} div q = delta (-Delta)^{-1} div q
      divergence(g, q.data() + Bu * nv, dv.data(), Bc);
      solve_poisson(g, dv.data(), phi.data(), 0.0, Bc);
      for (std::size_t c = 0; c < Bc; ++c) acc[c] += delta * phi[c * N + xs];
    }
    if (k == terms) break;
    apply_K(g, q.data(), s.data(), M);
    for (auto& v : s) v *= -delta;
  }
  const double nf = factorial(n);
  CompensatedSum<double> sum;
  for (double v : acc) sum.add(v);
  const double mean = sum.value() / Bc;
  double var = 0;
  for (double v : acc) var += sq(v - mean);
  res.value = ((opt.control_variate ? first : 0.0) + mean) / nf;
  res.stderr_ = Bc > 1 ? std::sqrt(var / (Bc - 1) / Bc) / nf : 0.0;
  res.resamples = static_cast<int>(Bc);
  return res;
}

}  // namespace hom
