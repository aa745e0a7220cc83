#include "homlab/field.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "homlab/fft.hpp"

namespace hom {

std::string model_name(Model m) {
  switch (m) {
    case Model::IidVertex: return "IidVertex";
    case Model::BlockIndependent: return "BlockIndependent";
    case Model::GaussianPowerLaw: return "GaussianPowerLaw";
  }
  return "?";
}

Model model_from_name(const std::string& s) {
  if (s == "IidVertex") return Model::IidVertex;
  if (s == "BlockIndependent") return Model::BlockIndependent;
  if (s == "GaussianPowerLaw") return Model::GaussianPowerLaw;
  throw ConfigError("unknown model '" + s + "'");
}

namespace {

Eigen::Matrix3d to_eigen(const Mat3& a, int d) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = a[i * d + j];
  return m;
}

Mat3 from_eigen(const Eigen::Matrix3d& m, int d) {
  Mat3 a{};
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a[i * d + j] = m(i, j);
  return a;
}

bool is_scalar_matrix(const Mat3& a, int d) {
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if ((i == j && a[i * d + j] != a[0]) || (i != j && a[i * d + j] != 0)) return false;
  return true;
}

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

}  // namespace

double operator_norm_sym(const Mat3& a, int d) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a, d).topLeftCorner(d, d));
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double ellipticity_constant(const Mat3& a, int d) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a, d).topLeftCorner(d, d));
  double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().cwiseAbs().maxCoeff();
  if (lo <= 0) return INFINITY;
  return std::max(1.0 / lo, hi);
}

double EnsembleSpec::beta() const { return std::max(gamma, (dim + gamma) / 2.0); }

bool EnsembleSpec::scalar_law() const {
  if (model == Model::GaussianPowerLaw) return true;
  for (const auto& e : law)
    if (!is_scalar_matrix(e.a, dim)) return false;
  return true;
}

std::vector<std::string> EnsembleSpec::violations() const {
  std::vector<std::string> v;
  if (dim < 1 || dim > 3) v.push_back("dimension must be 1, 2 or 3");
  if (model == Model::GaussianPowerLaw) {
    if (!(gamma > 0)) v.push_back("correlation exponent must be positive");
    if (!(delta >= 0 && delta < 1)) v.push_back("delta must lie in [0, 1)");
    return v;
  }
  if (law.empty()) v.push_back("site law must have at least one entry");
  double wsum = 0;
  for (std::size_t i = 0; i < law.size(); ++i) {
    const auto& e = law[i];
    if (!(e.weight >= 0)) v.push_back("law entry " + std::to_string(i) + ": negative weight");
    wsum += e.weight;
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c)
        if (e.a[r * dim + c] != e.a[c * dim + r])
          v.push_back("law entry " + std::to_string(i) + ": matrix not symmetric");
    double c0 = ellipticity_constant(e.a, dim);
    if (!std::isfinite(c0)) v.push_back("law entry " + std::to_string(i) + ": not elliptic");
    else if (C0 > 0 && c0 > C0 * (1 + 1e-12))
      v.push_back("law entry " + std::to_string(i) + ": violates ellipticity constant C0");
  }
  if (!law.empty() && std::abs(wsum - 1) > 1e-12) v.push_back("law weights must sum to 1");
  if (model == Model::BlockIndependent && block < 1) v.push_back("block size must be >= 1");
  return v;
}

void EnsembleSpec::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(v.front());
}

EnsembleSpec scalar_law_spec(int dim, std::vector<double> values, std::vector<double> weights) {
  EnsembleSpec s;
  s.dim = dim;
  if (weights.empty()) weights.assign(values.size(), 1.0 / values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    LawEntry e;
    for (int k = 0; k < dim; ++k) e.a[k * dim + k] = values[i];
    e.weight = weights[i];
    s.law.push_back(e);
  }
  return s;
}

void CoefficientField::check_ellipticity(double c0, double tol) const {
  const int d = dim();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Mat3 m{};
    std::copy(a.begin() + i * d * d, a.begin() + (i + 1) * d * d, m.begin());
    if (ellipticity_constant(m, d) > c0 * (1 + tol))
      throw NumericalError("ellipticity violated at site " + std::to_string(i));
  }
}

namespace {

CoefficientField empty_field(const EnsembleSpec& spec, const Grid& grid) {
  if (grid.dim() != spec.dim) throw ConfigError("grid dimension does not match the ensemble spec");
  CoefficientField f;
  f.grid = grid;
  f.a.assign(grid.size() * spec.dim * spec.dim, 0.0);
  f.scalar = spec.scalar_law();
  return f;
}

double law_C0(const EnsembleSpec& spec) {
  if (spec.C0 > 0) return spec.C0;
  double c = 1;
  for (const auto& e : spec.law) c = std::max(c, ellipticity_constant(e.a, spec.dim));
  return c;
}

void put(CoefficientField& f, std::size_t site, const Mat3& m) {
  const int d = f.dim();
  std::copy(m.begin(), m.begin() + d * d, f.a.begin() + site * d * d);
}

}  // namespace

CoefficientField sample_iid(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed) {
  if (spec.model != Model::IidVertex) throw ConfigError("sample_iid requires model IidVertex");
  spec.validate();
  CoefficientField f = empty_field(spec, grid);
  std::mt19937_64 rng(mix_seed(seed));
  std::vector<double> w;
  for (const auto& e : spec.law) w.push_back(e.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  for (std::size_t i = 0; i < grid.size(); ++i) put(f, i, spec.law[pick(rng)].a);
  f.C0 = law_C0(spec);
  return f;
}

namespace {
// Block index of site x under block size B and offset theta.
std::size_t block_index(const Grid& grid, const Site& x, int B, const Site& theta) {
  std::size_t idx = 0;
  for (int a = 0; a < grid.dim(); ++a) {
    int nb = grid.side(a) / B;
    idx = idx * nb + static_cast<std::size_t>(wrap(x[a] - theta[a], grid.side(a)) / B);
  }
  return idx;
}
std::size_t block_count(const Grid& grid, int B) {
  std::size_t n = 1;
  for (int a = 0; a < grid.dim(); ++a) n *= grid.side(a) / B;
  return n;
}
}  // namespace

CoefficientField sample_block_mixing(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed) {
  if (spec.model != Model::BlockIndependent) throw ConfigError("sample_block_mixing requires model BlockIndependent");
  spec.validate();
  for (int a = 0; a < grid.dim(); ++a)
    if (grid.side(a) % spec.block != 0) throw ConfigError("block size must divide the torus side");
  CoefficientField f = empty_field(spec, grid);
  std::mt19937_64 rng(mix_seed(seed));
  Site theta{0, 0, 0};
  if (spec.random_offset) {
    std::uniform_int_distribution<int> u(0, spec.block - 1);
    for (int a = 0; a < grid.dim(); ++a) theta[a] = u(rng);
  }
  std::vector<double> w;
  for (const auto& e : spec.law) w.push_back(e.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<std::size_t> choice(block_count(grid, spec.block));
  for (auto& c : choice) c = pick(rng);
  for (std::size_t i = 0; i < grid.size(); ++i)
    put(f, i, spec.law[choice[block_index(grid, grid.coords(i), spec.block, theta)]].a);
  f.C0 = law_C0(spec);
  return f;
}

std::vector<double> gaussian_c0(const EnsembleSpec& spec, const Grid& grid) {
  const std::size_t N = grid.size();
  std::vector<double> c0(N, 0.0);
  if (spec.unit_mass_kernel) {
    c0[0] = 1.0;
    return c0;
  }
  const double beta = spec.beta();
  CompensatedSum<double> s;
  for (std::size_t i = 0; i < N; ++i) {
    double r = grid.radius(grid.coords(i));
    c0[i] = std::pow(1.0 + r * r, -beta / 2);
    s.add(c0[i] * c0[i]);
  }
  const double norm = 1.0 / std::sqrt(s.value());
  for (auto& v : c0) v *= norm;
  return c0;
}

std::vector<double> gaussian_covariance(const EnsembleSpec& spec, const Grid& grid) {
  auto c0 = gaussian_c0(spec, grid);
  std::vector<cplx> buf(c0.begin(), c0.end());
  Fft fft(grid);
  fft.forward(buf.data());
  for (auto& v : buf) v = v * v;
  fft.inverse(buf.data());
  std::vector<double> c(grid.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = buf[i].real();
  return c;
}

CoefficientField sample_gaussian_powerlaw(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed,
                                          std::vector<std::string>* warnings, int max_measurement_radius) {
  if (spec.model != Model::GaussianPowerLaw) throw ConfigError("sample_gaussian_powerlaw requires GaussianPowerLaw");
  spec.validate();
  for (int a = 0; a < grid.dim(); ++a)
    if (warnings && max_measurement_radius > 0 && grid.side(a) < 4 * max_measurement_radius)
      warnings->push_back("periodization: torus side " + std::to_string(grid.side(a)) +
                          " < 4x max measurement radius " + std::to_string(max_measurement_radius));
  CoefficientField f = empty_field(spec, grid);
  const std::size_t N = grid.size();
  const int d = grid.dim();
  auto c0 = gaussian_c0(spec, grid);
  std::vector<cplx> kc(c0.begin(), c0.end()), w(N);
  std::mt19937_64 rng(mix_seed(seed));
  std::normal_distribution<double> nd;
  for (auto& v : w) v = nd(rng);
  Fft fft(grid);
  fft.forward(kc.data());
  fft.forward(w.data());
  for (std::size_t i = 0; i < N; ++i) w[i] *= kc[i];
  fft.inverse(w.data());
  f.b.assign(N * d * d, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    double bi = std::tanh(w[i].real());
    for (int k = 0; k < d; ++k) {
      f.a[i * d * d + k * d + k] = 1.0 + spec.delta * bi;
      f.b[i * d * d + k * d + k] = bi;
    }
  }
  f.delta = spec.delta;
  f.C0 = spec.C0 > 0 ? spec.C0 : 1.0 / (1.0 - spec.delta);
  return f;
}

CoefficientField sample_field(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed) {
  switch (spec.model) {
    case Model::IidVertex: return sample_iid(spec, grid, seed);
    case Model::BlockIndependent: return sample_block_mixing(spec, grid, seed);
    case Model::GaussianPowerLaw: return sample_gaussian_powerlaw(spec, grid, seed);
  }
  throw ConfigError("unknown model");
}

CoefficientField Ensemble::member(std::size_t m) const {
  CoefficientField f;
  f.grid = grid;
  f.a.assign(a_of(m), a_of(m) + block());
  if (!b.empty()) f.b.assign(b_of(m), b_of(m) + block());
  f.delta = delta;
  f.C0 = C0;
  f.scalar = scalar;
  return f;
}

template <class T>
std::vector<T> Ensemble::expect(const T* data, std::size_t comps) const {
  const std::size_t N = grid.size(), n = comps * N;
  if (expectation == Expectation::Ergodic) {
    std::vector<T> out(members * n);
    for (std::size_t m = 0; m < members; ++m)
      for (std::size_t c = 0; c < comps; ++c) {
        CompensatedSum<T> s;
        const T* p = data + m * n + c * N;
        for (std::size_t i = 0; i < N; ++i) s.add(p[i]);
        T mean = s.value() / double(N);
        std::fill(out.begin() + m * n + c * N, out.begin() + m * n + (c + 1) * N, mean);
      }
    return out;
  }
  std::vector<T> out(n, T(0));
  if (members == 1) {
    std::copy(data, data + n, out.begin());
    return out;
  }
  // Pairwise-free compensated accumulation in fixed member order.
  std::vector<T> comp(n, T(0));
  for (std::size_t m = 0; m < members; ++m) {
    const double w = weights[m];
    const T* p = data + m * n;
    for (std::size_t i = 0; i < n; ++i) {
      T y = w * p[i] - comp[i];
      T t = out[i] + y;
      comp[i] = (t - out[i]) - y;
      out[i] = t;
    }
  }
  return out;
}

template <class T>
void Ensemble::project_perp(T* data, std::size_t comps) const {
  const std::size_t n = comps * grid.size();
  auto mean = expect(data, comps);
  if (expectation == Expectation::Ergodic) {
    for (std::size_t i = 0; i < members * n; ++i) data[i] -= mean[i];
    return;
  }
  for (std::size_t m = 0; m < members; ++m) {
    T* p = data + m * n;
    for (std::size_t i = 0; i < n; ++i) p[i] -= mean[i];
  }
}

template std::vector<double> Ensemble::expect(const double*, std::size_t) const;
template std::vector<cplx> Ensemble::expect(const cplx*, std::size_t) const;
template void Ensemble::project_perp(double*, std::size_t) const;
template void Ensemble::project_perp(cplx*, std::size_t) const;

template <class T>
void apply_coeff(const double* coeff, const T* in, T* out, std::size_t N, int d, bool scalar) {
  if (scalar) {
    for (int j = 0; j < d; ++j)
      for (std::size_t i = 0; i < N; ++i) out[j * N + i] = coeff[i * d * d] * in[j * N + i];
    return;
  }
  for (std::size_t i = 0; i < N; ++i) {
    const double* c = coeff + i * d * d;
    T v[3];
    for (int k = 0; k < d; ++k) v[k] = in[k * N + i];
    for (int j = 0; j < d; ++j) {
      T s = 0;
      for (int k = 0; k < d; ++k) s += c[j * d + k] * v[k];
      out[j * N + i] = s;
    }
  }
}
template void apply_coeff(const double*, const double*, double*, std::size_t, int, bool);
template void apply_coeff(const double*, const cplx*, cplx*, std::size_t, int, bool);

namespace {
void finish_ensemble(Ensemble& e) {
  const int d = e.dim();
  e.scalar = true;
  e.C0 = 1;
  for (std::size_t s = 0; s < e.members * e.grid.size(); ++s) {
    Mat3 m{};
    std::copy(e.a.begin() + s * d * d, e.a.begin() + (s + 1) * d * d, m.begin());
    if (!is_scalar_matrix(m, d)) e.scalar = false;
  }
  // C0 from distinct site matrices (cheap for finite laws, exhaustive otherwise)
  const std::size_t total = e.members * e.grid.size();
  const std::size_t stride = total > 200000 ? total / 200000 : 1;
  for (std::size_t s = 0; s < total; s += stride) {
    Mat3 m{};
    std::copy(e.a.begin() + s * d * d, e.a.begin() + (s + 1) * d * d, m.begin());
    e.C0 = std::max(e.C0, ellipticity_constant(m, d));
  }
  if (e.spec && e.spec->model != Model::GaussianPowerLaw) e.C0 = std::max(e.C0, law_C0(*e.spec));
  if (e.spec && e.spec->model == Model::GaussianPowerLaw) e.C0 = 1.0 / (1.0 - e.spec->delta);
}
}  // namespace

Ensemble single_member(const CoefficientField& f) {
  Ensemble e;
  e.grid = f.grid;
  e.members = 1;
  e.a = f.a;
  e.weights = {1.0};
  e.exact = true;
  e.label = "single";
  finish_ensemble(e);
  return e;
}

Ensemble monte_carlo(const EnsembleSpec& spec, const Grid& grid, std::size_t count, std::uint64_t seed) {
  spec.validate();
  if (count == 0) throw ConfigError("sample count must be positive");
  Ensemble e;
  e.grid = grid;
  e.members = count;
  e.exact = false;
  e.spec = spec;
  e.label = "montecarlo:" + model_name(spec.model);
  e.weights.assign(count, 1.0 / count);
  e.a.reserve(count * e.block());
  for (std::size_t m = 0; m < count; ++m) {
    auto f = sample_field(spec, grid, mix_seed(seed, m));
    e.a.insert(e.a.end(), f.a.begin(), f.a.end());
  }
  finish_ensemble(e);
  return e;
}

Ensemble enumerate_exact(const EnsembleSpec& spec, const Grid& grid, double max_bits) {
  spec.validate();
  if (spec.model == Model::GaussianPowerLaw) throw CapacityError("Gaussian laws have no finite support to enumerate");
  if (grid.dim() != spec.dim) throw ConfigError("grid dimension does not match the ensemble spec");
  const int d = grid.dim();
  const std::size_t N = grid.size();
  const std::size_t S = spec.law.size();
  std::size_t units = N;
  std::size_t offsets = 1;
  if (spec.model == Model::BlockIndependent) {
    for (int a = 0; a < d; ++a)
      if (grid.side(a) % spec.block != 0) throw ConfigError("block size must divide the torus side");
    units = block_count(grid, spec.block);
    if (spec.random_offset) offsets = ipow(spec.block, d);
  }
  const double bits = units * std::log2(double(S)) + std::log2(double(offsets));
  if (bits > max_bits + 1e-9) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "exact enumeration needs %.6g states (2^%.2f bits > 2^%.0f)", std::exp2(bits), bits,
                  max_bits);
    throw CapacityError(buf);
  }
  const std::size_t configs = ipow(S, units) * offsets;
  if (configs * N * d * d > (std::size_t(1) << 28)) throw CapacityError("exact ensemble exceeds the memory guard");
  Ensemble e;
  e.grid = grid;
  e.members = configs;
  e.exact = true;
  e.spec = spec;
  e.label = "exact:" + model_name(spec.model);
  e.a.resize(configs * N * d * d);
  e.weights.resize(configs);
  std::vector<std::size_t> digit(units, 0);
  std::size_t m = 0;
  for (std::size_t off = 0; off < offsets; ++off) {
    Site theta{0, 0, 0};
    std::size_t o = off;
    for (int a = 0; a < d; ++a) {
      theta[a] = static_cast<int>(o % spec.block);
      o /= spec.block;
    }
    std::fill(digit.begin(), digit.end(), 0);
    for (std::size_t c = 0; c < ipow(S, units); ++c, ++m) {
      double w = 1.0 / offsets;
      for (std::size_t u = 0; u < units; ++u) w *= spec.law[digit[u]].weight;
      e.weights[m] = w;
      double* am = e.a.data() + m * N * d * d;
      for (std::size_t i = 0; i < N; ++i) {
        std::size_t u = spec.model == Model::BlockIndependent ? block_index(grid, grid.coords(i), spec.block, theta) : i;
        const Mat3& v = spec.law[digit[u]].a;
        std::copy(v.begin(), v.begin() + d * d, am + i * d * d);
      }
      for (std::size_t u = 0; u < units; ++u) {  // mixed-radix increment, site 0 fastest
        if (++digit[u] < S) break;
        digit[u] = 0;
      }
    }
  }
  finish_ensemble(e);
  return e;
}

Ensemble translates(const CoefficientField& f) {
  const Grid& g = f.grid;
  const std::size_t N = g.size();
  const int d = g.dim();
  Ensemble e;
  e.grid = g;
  e.members = N;
  e.exact = true;
  e.label = "translates";
  e.weights.assign(N, 1.0 / N);
  e.a.resize(N * N * d * d);
  for (std::size_t m = 0; m < N; ++m) {
    Site s = g.coords(m);
    for (std::size_t i = 0; i < N; ++i) {
      std::size_t src = g.offset(i, s);
      std::copy(f.a.begin() + src * d * d, f.a.begin() + (src + 1) * d * d, e.a.begin() + (m * N + i) * d * d);
    }
  }
  finish_ensemble(e);
  return e;
}

CoefficientField tile(const CoefficientField& f, const Grid& big) {
  const Grid& g = f.grid;
  if (big.dim() != g.dim()) throw ParameterError("tile: dimension mismatch");
  for (int a = 0; a < g.dim(); ++a)
    if (big.side(a) % g.side(a) != 0) throw ParameterError("tile: sides must be multiples of the cell");
  const int d = g.dim();
  CoefficientField out = f;
  out.grid = big;
  out.a.resize(big.size() * d * d);
  if (!f.b.empty()) out.b.resize(big.size() * d * d);
  for (std::size_t i = 0; i < big.size(); ++i) {
    std::size_t src = g.index(big.coords(i));
    std::copy(f.a.begin() + src * d * d, f.a.begin() + (src + 1) * d * d, out.a.begin() + i * d * d);
    if (!f.b.empty())
      std::copy(f.b.begin() + src * d * d, f.b.begin() + (src + 1) * d * d, out.b.begin() + i * d * d);
  }
  return out;
}

Ensemble tile(const Ensemble& e, const Grid& big) {
  Ensemble out = e;
  out.grid = big;
  out.a.clear();
  out.b.clear();
  for (std::size_t m = 0; m < e.members; ++m) {
    auto t = tile(e.member(m), big);
    out.a.insert(out.a.end(), t.a.begin(), t.a.end());
    if (!t.b.empty()) out.b.insert(out.b.end(), t.b.begin(), t.b.end());
  }
  return out;
}

Normalization normalize(Ensemble& e) {
  const int d = e.dim();
  const std::size_t N = e.grid.size();
  Normalization res;
  Eigen::Matrix3d mean = Eigen::Matrix3d::Zero();
  bool law_based = e.spec && (e.spec->model != Model::GaussianPowerLaw);
  if (e.spec && e.spec->model == Model::GaussianPowerLaw) {
    mean.topLeftCorner(d, d) = Eigen::MatrixXd::Identity(d, d);
    res.method = "law (odd bounded map)";
  } else if (law_based) {
    for (const auto& le : e.spec->law) mean += le.weight * to_eigen(le.a, d);
    res.method = "law";
  } else {
    // ensemble mean over members and sites
    std::vector<double> per_member(e.members);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) {
        CompensatedSum<double> s;
        for (std::size_t m = 0; m < e.members; ++m) {
          CompensatedSum<double> sm;
          for (std::size_t i = 0; i < N; ++i) sm.add(e.a[(m * N + i) * d * d + r * d + c]);
          per_member[m] = sm.value() / N;
          s.add(e.weights[m] * per_member[m]);
        }
        mean(r, c) = s.value();
        if (!e.exact && e.members > 1) {
          double var = 0;
          for (double v : per_member) var += sq(v - mean(r, c));
          res.mean_error = std::max(res.mean_error, std::sqrt(var / (e.members - 1) / e.members));
        }
      }
    res.method = e.exact ? "exact ensemble mean" : "sample mean";
  }
  Eigen::MatrixXd md = mean.topLeftCorner(d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(md);
  if (es.eigenvalues().minCoeff() <= 0) throw NumericalError("E[a] is not positive definite");
  Eigen::MatrixXd S = es.operatorInverseSqrt();
  res.mean_a = from_eigen([&] {
    Eigen::Matrix3d m3 = Eigen::Matrix3d::Identity();
    m3.topLeftCorner(d, d) = md;
    return m3;
  }(), d);
  auto transform = [&](const double* src, double* dst) {
    Eigen::MatrixXd A(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) A(r, c) = src[r * d + c];
    Eigen::MatrixXd T = S * A * S;
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) dst[r * d + c] = 0.5 * (T(r, c) + T(c, r));
  };
  const bool is_identity_mean = (md - Eigen::MatrixXd::Identity(d, d)).norm() == 0;
  if (!is_identity_mean)
    for (std::size_t s = 0; s < e.members * N; ++s) transform(e.a.data() + s * d * d, e.a.data() + s * d * d);
  // delta = ess-sup |a~ - Id|
  double delta = 0;
  auto dev = [&](const double* m) {
    Mat3 t{};
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) t[r * d + c] = m[r * d + c] - (r == c ? 1.0 : 0.0);
    return operator_norm_sym(t, d);
  };
  if (e.spec && e.spec->model == Model::GaussianPowerLaw) {
    delta = e.spec->delta;
  } else if (law_based) {
    for (const auto& le : e.spec->law) {
      double t[9];
      transform(le.a.data(), t);
      delta = std::max(delta, dev(t));
    }
  } else {
    for (std::size_t s = 0; s < e.members * N; ++s) delta = std::max(delta, dev(e.a.data() + s * d * d));
  }
  if (delta < 1e-15) delta = 0;
  e.b.assign(e.a.size(), 0.0);
  if (delta > 0)
    for (std::size_t s = 0; s < e.members * N; ++s)
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
          e.b[s * d * d + r * d + c] = (e.a[s * d * d + r * d + c] - (r == c ? 1.0 : 0.0)) / delta;
  e.delta = delta;
  e.normalized = true;
  finish_ensemble(e);
  res.delta = delta;
  return res;
}

std::vector<CovarianceEntry> empirical_covariance(const Ensemble& e, int max_radius) {
  const Grid& g = e.grid;
  const int d = g.dim();
  const std::size_t N = g.size();
  if (e.b.empty()) throw ParameterError("empirical_covariance: ensemble must be normalized");
  std::vector<CovarianceEntry> out;
  std::vector<double> per(e.members);
  for (std::size_t zi = 0; zi < N; ++zi) {
    Site z = g.min_image(g.coords(zi));
    double r = g.radius(z);
    if (r > max_radius) continue;
    CovarianceEntry ce;
    ce.offset = z;
    ce.radius = r;
    for (int rr = 0; rr < d; ++rr)
      for (int cc = 0; cc < d; ++cc) {
        if (e.scalar && rr != cc) continue;
        CompensatedSum<double> tot;
        for (std::size_t m = 0; m < e.members; ++m) {
          const double* bm = e.b_of(m);
          CompensatedSum<double> s;
          for (std::size_t x = 0; x < N; ++x) {
            std::size_t y = g.offset(x, z);
            double v = 0;
            for (int k = 0; k < d; ++k) v += bm[x * d * d + rr * d + k] * bm[y * d * d + k * d + cc];
            s.add(v);
          }
          per[m] = s.value() / N;
          tot.add(e.weights[m] * per[m]);
        }
        ce.value[rr * d + cc] = tot.value();
        if (!e.exact && e.members > 1) {
          double var = 0;
          for (double v : per) var += sq(v - ce.value[rr * d + cc]);
          ce.stderr_[rr * d + cc] = std::sqrt(var / (e.members - 1) / e.members);
        }
      }
    out.push_back(ce);
  }
  return out;
}

void export_binary(const std::vector<double>& values, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  for (double v : values) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    os.write(reinterpret_cast<const char*>(&u), sizeof u);
  }
}

void export_binary(const CoefficientField& f, const std::string& path) { export_binary(f.a, path); }

}  // namespace hom
