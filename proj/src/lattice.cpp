#include "homlab/lattice.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <mutex>
#include <random>
#include <tuple>

#include "homlab/fft.hpp"

namespace hom {

namespace {
using GridKey = std::tuple<int, int, int, int>;
GridKey key_of(const Grid& g) { return {g.dim(), g.side(0), g.side(1), g.side(2)}; }
std::mutex cache_mutex;
}  // namespace

DiffSymbol::DiffSymbol(const Grid& grid, Freq xi) : g2(grid.size(), 0.0) {
  const std::size_t N = grid.size();
  for (int a = 0; a < grid.dim(); ++a) g[a].resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    Freq k = grid.frequency(i);
    for (int a = 0; a < grid.dim(); ++a) {
      cplx v = std::polar(1.0, k[a] + xi[a]) - 1.0;
      g[a][i] = v;
      g2[i] += std::norm(v);
    }
  }
}

const DiffSymbol& unshifted_symbol(const Grid& grid) {
  static std::map<GridKey, std::unique_ptr<DiffSymbol>> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto& p = cache[key_of(grid)];
  if (!p) p = std::make_unique<DiffSymbol>(grid);
  return *p;
}

Neighbors::Neighbors(const Grid& grid) {
  const std::size_t N = grid.size();
  for (int a = 0; a < grid.dim(); ++a) {
    next[a].resize(N);
    prev[a].resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      next[a][i] = grid.shift(i, a, 1);
      prev[a][i] = grid.shift(i, a, -1);
    }
  }
}

const Neighbors& neighbors(const Grid& grid) {
  static std::map<GridKey, std::unique_ptr<Neighbors>> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto& p = cache[key_of(grid)];
  if (!p) p = std::make_unique<Neighbors>(grid);
  return *p;
}

void gradient(const Grid& grid, const double* u, double* g, std::size_t count) {
  const auto& nb = neighbors(grid);
  const std::size_t N = grid.size();
  const int d = grid.dim();
  for (std::size_t m = 0; m < count; ++m) {
    const double* um = u + m * N;
    double* gm = g + m * N * d;
    for (int a = 0; a < d; ++a) {
      const std::size_t* nx = nb.next[a].data();
      double* ga = gm + a * N;
      for (std::size_t i = 0; i < N; ++i) ga[i] = um[nx[i]] - um[i];
    }
  }
}

void divergence(const Grid& grid, const double* g, double* out, std::size_t count) {
  const auto& nb = neighbors(grid);
  const std::size_t N = grid.size();
  const int d = grid.dim();
  for (std::size_t m = 0; m < count; ++m) {
    const double* gm = g + m * N * d;
    double* om = out + m * N;
    std::fill(om, om + N, 0.0);
    for (int a = 0; a < d; ++a) {
      const std::size_t* pv = nb.prev[a].data();
      const double* ga = gm + a * N;
      for (std::size_t i = 0; i < N; ++i) om[i] += ga[i] - ga[pv[i]];
    }
  }
}

void gradient(const Grid& grid, const cplx* u, cplx* g, const Freq& xi, std::size_t count) {
  const auto& nb = neighbors(grid);
  const std::size_t N = grid.size();
  const int d = grid.dim();
  cplx ph[3];
  for (int a = 0; a < d; ++a) ph[a] = std::polar(1.0, xi[a]);
  for (std::size_t m = 0; m < count; ++m) {
    const cplx* um = u + m * N;
    cplx* gm = g + m * N * d;
    for (int a = 0; a < d; ++a) {
      const std::size_t* nx = nb.next[a].data();
      cplx* ga = gm + a * N;
      const cplx p = ph[a];
      for (std::size_t i = 0; i < N; ++i) ga[i] = p * um[nx[i]] - um[i];
    }
  }
}

void divergence(const Grid& grid, const cplx* g, cplx* out, const Freq& xi, std::size_t count) {
  const auto& nb = neighbors(grid);
  const std::size_t N = grid.size();
  const int d = grid.dim();
  cplx ph[3];
  for (int a = 0; a < d; ++a) ph[a] = std::polar(1.0, -xi[a]);
  for (std::size_t m = 0; m < count; ++m) {
    const cplx* gm = g + m * N * d;
    cplx* om = out + m * N;
    std::fill(om, om + N, cplx(0));
    for (int a = 0; a < d; ++a) {
      const std::size_t* pv = nb.prev[a].data();
      const cplx* ga = gm + a * N;
      const cplx p = ph[a];
      for (std::size_t i = 0; i < N; ++i) om[i] += ga[i] - p * ga[pv[i]];
    }
  }
}

void solve_poisson(const Grid& grid, const double* f, double* u, double mu, std::size_t count) {
  if (mu < 0) throw ParameterError("mass must be nonnegative");
  const std::size_t N = grid.size();
  const auto& sym = unshifted_symbol(grid);
  std::vector<cplx> buf(N);
  Fft fft(grid, 1);
  for (std::size_t m = 0; m < count; ++m) {
    const double* fm = f + m * N;
    if (mu == 0) {
      double s = compensated_sum(fm, fm + N);
      double scale = 0;
      for (std::size_t i = 0; i < N; ++i) scale = std::max(scale, std::abs(fm[i]));
      if (std::abs(s) > 1e-10 * std::max(scale, 1e-300) * std::sqrt(double(N)) && scale > 0)
        throw NumericalError("solve_poisson: mu = 0 requires a mean-zero right-hand side");
    }
    for (std::size_t i = 0; i < N; ++i) buf[i] = fm[i];
    fft.forward(buf.data());
    for (std::size_t i = 0; i < N; ++i) {
      double den = mu + sym.g2[i];
      buf[i] = den > 0 ? buf[i] / den : cplx(0);
    }
    fft.inverse(buf.data());
    double* um = u + m * N;
    for (std::size_t i = 0; i < N; ++i) um[i] = buf[i].real();
  }
}

std::vector<double> solve_poisson(const Grid& grid, const std::vector<double>& f, double mu) {
  std::vector<double> u(f.size());
  solve_poisson(grid, f.data(), u.data(), mu, f.size() / grid.size());
  return u;
}

void apply_K(const Grid& grid, const double* g, double* out, std::size_t count) {
  const std::size_t N = grid.size();
  const int d = grid.dim();
  const auto& sym = unshifted_symbol(grid);
  // Batch in chunks to bound the complex workspace.
  const std::size_t chunk = std::max<std::size_t>(1, std::min<std::size_t>(count, (1u << 22) / (N * d) + 1));
  std::vector<cplx> buf(chunk * N * d);
  for (std::size_t m0 = 0; m0 < count; m0 += chunk) {
    std::size_t cnt = std::min(chunk, count - m0);
    Fft fft(grid, cnt * d);
    const double* src = g + m0 * N * d;
    for (std::size_t i = 0; i < cnt * N * d; ++i) buf[i] = src[i];
    if (cnt * d != fft.howmany()) throw NumericalError("fft batch mismatch");
    fft.forward(buf.data());
    for (std::size_t m = 0; m < cnt; ++m) {
      cplx* b = buf.data() + m * N * d;
      for (std::size_t i = 0; i < N; ++i) {
        if (sym.g2[i] == 0) {
          for (int a = 0; a < d; ++a) b[a * N + i] = 0;
          continue;
        }
        cplx s = 0;
        for (int a = 0; a < d; ++a) s += std::conj(sym.g[a][i]) * b[a * N + i];
        s /= sym.g2[i];
        for (int a = 0; a < d; ++a) b[a * N + i] = sym.g[a][i] * s;
      }
    }
    fft.inverse(buf.data());
    double* dst = out + m0 * N * d;
    for (std::size_t i = 0; i < cnt * N * d; ++i) dst[i] = buf[i].real();
  }
}

std::vector<double> apply_K(const Grid& grid, const std::vector<double>& g) {
  std::vector<double> out(g.size());
  apply_K(grid, g.data(), out.data(), g.size() / (grid.size() * grid.dim()));
  return out;
}

std::vector<double> K_kernel(const Grid& grid) {
  const std::size_t N = grid.size();
  const int d = grid.dim();
  const auto& sym = unshifted_symbol(grid);
  std::vector<cplx> buf(N * d * d);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      for (std::size_t i = 0; i < N; ++i)
        buf[(j * d + k) * N + i] = sym.g2[i] > 0 ? sym.g[j][i] * std::conj(sym.g[k][i]) / sym.g2[i] : cplx(0);
  Fft fft(grid, d * d);
  fft.inverse(buf.data());
  std::vector<double> out(N * d * d);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real();
  return out;
}

std::vector<double> apply_truncated_K(const Grid& grid, const std::vector<double>& g, int ell) {
  const int R = grid.R();
  if (ell < R) throw ParameterError("truncation requires ell >= R");
  const std::size_t N = grid.size();
  const int d = grid.dim();
  const std::vector<double> ker = K_kernel(grid);
  std::vector<Site> zc(N);
  for (std::size_t i = 0; i < N; ++i) zc[i] = grid.coarse_center(grid.coords(i));
  std::vector<double> out(N * d, 0.0);
  for (std::size_t x = 0; x < N; ++x) {
    Site cx = grid.coords(x);
    for (std::size_t y = 0; y < N; ++y) {
      if (grid.dist_inf(zc[x], zc[y]) > ell) continue;
      Site cy = grid.coords(y);
      std::size_t z = grid.index({cx[0] - cy[0], cx[1] - cy[1], cx[2] - cy[2]});
      for (int j = 0; j < d; ++j) {
        double s = 0;
        for (int k = 0; k < d; ++k) s += ker[(j * d + k) * N + z] * g[k * N + y];
        out[j * N + x] += s;
      }
    }
  }
  return out;
}

double mixed_norm(const Grid& grid, const std::vector<double>& g, int comps, double p, double q) {
  if (p < 1 || q < 1) throw ParameterError("mixed_norm requires p, q >= 1");
  const std::size_t N = grid.size();
  std::vector<double> cell_norms;
  for (const Site& z : grid.coarse_points()) {
    double acc = 0;
    for (std::size_t s : grid.cube_sites(z)) {
      double v = 0;
      for (int c = 0; c < comps; ++c) v += sq(g[c * N + s]);
      v = std::sqrt(v);
      if (std::isinf(q))
        acc = std::max(acc, v);
      else
        acc += std::pow(v, q);
    }
    cell_norms.push_back(std::isinf(q) ? acc : std::pow(acc, 1.0 / q));
  }
  if (std::isinf(p)) return *std::max_element(cell_norms.begin(), cell_norms.end());
  CompensatedSum<double> s;
  for (double c : cell_norms) s.add(std::pow(c, p));
  return std::pow(s.value(), 1.0 / p);
}

std::vector<double> OperatorHandle::operator()(const std::vector<double>& in) const {
  std::vector<double> out(in.size(), 0.0);
  apply(in.data(), out.data());
  return out;
}

OperatorHandle identity_operator(const Grid& grid) {
  const std::size_t n = grid.size() * grid.dim();
  return {"identity", grid, 0, [n](const double* in, double* out) { std::copy(in, in + n, out); }};
}

OperatorHandle multiply_operator(const Grid& grid, std::vector<double> field) {
  const std::size_t N = grid.size();
  const int d = grid.dim();
  if (field.size() != N * d * d) throw ParameterError("multiply_operator: field must hold dim x dim per site");
  auto f = std::make_shared<std::vector<double>>(std::move(field));
  return {"multiply", grid, 0, [f, N, d](const double* in, double* out) {
            for (std::size_t i = 0; i < N; ++i)
              for (int j = 0; j < d; ++j) {
                double s = 0;
                for (int k = 0; k < d; ++k) s += (*f)[i * d * d + j * d + k] * in[k * N + i];
                out[j * N + i] = s;
              }
          }};
}

OperatorHandle K_operator(const Grid& grid) {
  return {"K", grid, 0, [grid](const double* in, double* out) { apply_K(grid, in, out, 1); }};
}

OperatorHandle truncated_K_operator(const Grid& grid, int ell) {
  if (ell < grid.R()) throw ParameterError("truncation requires ell >= R");
  const std::size_t n = grid.size() * grid.dim();
  return {"K_trunc", grid, ell, [grid, ell, n](const double* in, double* out) {
            std::vector<double> v(in, in + n);
            auto r = apply_truncated_K(grid, v, ell);
            std::copy(r.begin(), r.end(), out);
          }};
}

OperatorHandle compose(const OperatorHandle& a, const OperatorHandle& b) {
  const std::size_t n = a.grid.size() * a.grid.dim();
  auto fa = a.apply, fb = b.apply;
  return {a.name + "*" + b.name, a.grid, std::max(a.ell, b.ell), [fa, fb, n](const double* in, double* out) {
            std::vector<double> tmp(n);
            fb(in, tmp.data());
            fa(tmp.data(), out);
          }};
}

KernelNorm averaged_kernel_norm(const OperatorHandle& T, const Site& x, const Site& y, double q, int max_iter,
                                double rtol, std::uint64_t seed) {
  const Grid& grid = T.grid;
  const std::size_t N = grid.size();
  const int d = grid.dim();
  const auto qx = grid.cube_sites(x), qy = grid.cube_sites(y);
  const int nx = static_cast<int>(qx.size()) * d, ny = static_cast<int>(qy.size()) * d;
  // Materialize the restricted map column by column.
  Eigen::MatrixXd A(nx, ny);
  std::vector<double> in(N * d, 0.0), out(N * d);
  for (int c = 0; c < ny; ++c) {
    std::fill(in.begin(), in.end(), 0.0);
    in[(c % d) * N + qy[c / d]] = 1.0;
    T.apply(in.data(), out.data());
    for (int r = 0; r < nx; ++r) A(r, c) = out[(r % d) * N + qx[r / d]];
  }
  KernelNorm res;
  if (A.norm() == 0) {
    res.method = "exact-zero";
    return res;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  if (q == 2) {
    // power iteration on A^T A
    Eigen::VectorXd v(ny);
    for (int i = 0; i < ny; ++i) v[i] = nd(rng);
    v.normalize();
    double sigma = 0;
    for (int it = 1; it <= max_iter; ++it) {
      Eigen::VectorXd w = A.transpose() * (A * v);
      double lam = w.norm();
      if (lam == 0) {
        res.method = "power-iteration";
        res.iterations = it;
        return res;
      }
      v = w / lam;
      double s = std::sqrt(lam);
      if (std::abs(s - sigma) <= rtol * s) {
        res.value = res.upper = s;
        res.iterations = it;
        res.method = "power-iteration";
        return res;
      }
      sigma = s;
    }
    throw IterationLimit("averaged_kernel_norm: power iteration did not converge", 0.0, sigma);
  }
  // q != 2: lower bound from sampled and iterated inputs, upper bound by Riesz-Thorin.
  auto lq = [q](const Eigen::VectorXd& v) {
    if (std::isinf(q)) return v.cwiseAbs().maxCoeff();
    double s = 0;
    for (int i = 0; i < v.size(); ++i) s += std::pow(std::abs(v[i]), q);
    return std::pow(s, 1.0 / q);
  };
  double best = 0;
  auto probe = [&](const Eigen::VectorXd& v) {
    double n = lq(v);
    if (n > 0) best = std::max(best, lq(A * v) / n);
  };
  for (int c = 0; c < ny; ++c) probe(Eigen::VectorXd::Unit(ny, c));
  const double qs = std::isinf(q) ? 1.0 : q / (q - 1.0);  // dual exponent
  for (int s = 0; s < 64; ++s) {
    Eigen::VectorXd v(ny);
    for (int i = 0; i < ny; ++i) v[i] = (s % 2 == 0) ? nd(rng) : (rng() & 1 ? 1.0 : -1.0);
    probe(v);
    // Boyd-style nonlinear power iteration
    for (int it = 0; it < 50; ++it) {
      Eigen::VectorXd w = A * v;
      Eigen::VectorXd u(nx);
      for (int i = 0; i < nx; ++i)
        u[i] = std::isinf(q) ? (w[i] >= 0 ? 1.0 : -1.0) * (std::abs(w[i]) == w.cwiseAbs().maxCoeff())
                             : (w[i] >= 0 ? 1.0 : -1.0) * std::pow(std::abs(w[i]), q - 1);
      Eigen::VectorXd z = A.transpose() * u;
      Eigen::VectorXd nv(ny);
      for (int i = 0; i < ny; ++i)
        nv[i] = (z[i] >= 0 ? 1.0 : -1.0) * (std::isinf(qs) ? 1.0 : std::pow(std::abs(z[i]), qs - 1));
      if (nv.norm() == 0) break;
      v = nv;
      probe(v);
    }
  }
  const double n1 = A.cwiseAbs().colwise().sum().maxCoeff();
  const double ninf = A.cwiseAbs().rowwise().sum().maxCoeff();
  const double theta = std::isinf(q) ? 0.0 : 1.0 / q;
  res.value = best;
  res.upper = std::pow(n1, theta) * std::pow(ninf, 1.0 - theta);
  res.method = "sampled-lower-bound/riesz-thorin-upper";
  res.iterations = 64 * 50;
  return res;
}

}  // namespace hom
