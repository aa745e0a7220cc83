#pragma once

#include <optional>
#include <string>
#include <vector>

#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace hom {

enum class Model { IidVertex, BlockIndependent, GaussianPowerLaw };
std::string model_name(Model m);
Model model_from_name(const std::string& s);

struct LawEntry {
  Mat3 a{};  // row-major dim x dim, symmetric
  double weight = 0;
};

struct EnsembleSpec {
  Model model = Model::IidVertex;
  int dim = 1;
  std::vector<LawEntry> law;  // IidVertex / BlockIndependent
  double delta = 0.1;         // GaussianPowerLaw perturbation size
  int block = 1;              // BlockIndependent
  bool random_offset = false; // BlockIndependent: stationarize by a random block offset
  double gamma = 2.0;         // GaussianPowerLaw correlation exponent
  bool unit_mass_kernel = false;  // c0 = delta at the origin
  double C0 = 0;              // 0: derived
  std::uint64_t seed = 0;

  double beta() const;        // max(gamma, (d+gamma)/2)
  bool scalar_law() const;
  void validate() const;      // throws ConfigError with the first violation
  std::vector<std::string> violations() const;
};

// Two-point scalar law {lo, hi} with the given weight on lo.
EnsembleSpec scalar_law_spec(int dim, std::vector<double> values, std::vector<double> weights = {});

struct CoefficientField {
  Grid grid;
  std::vector<double> a;  // N * dim*dim
  std::vector<double> b;  // fluctuation with a = Id + delta b (empty if not decomposed)
  double delta = 0;
  double C0 = 1;
  bool scalar = true;

  int dim() const { return grid.dim(); }
  double scalar_at(std::size_t site) const { return a[site * dim() * dim()]; }
  // Throws NumericalError naming the first violating site.
  void check_ellipticity(double C0, double tol = 1e-12) const;
};

// Ellipticity constant of one symmetric matrix: max(1/lambda_min, |A|).
double ellipticity_constant(const Mat3& a, int dim);
double operator_norm_sym(const Mat3& a, int dim);

CoefficientField sample_iid(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed);
CoefficientField sample_block_mixing(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed);
CoefficientField sample_gaussian_powerlaw(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed,
                                          std::vector<std::string>* warnings = nullptr,
                                          int max_measurement_radius = 0);
CoefficientField sample_field(const EnsembleSpec& spec, const Grid& grid, std::uint64_t seed);

// Gaussian kernel c0 on the torus (normalized so that sum c0^2 = 1) and c = c0 * c0.
std::vector<double> gaussian_c0(const EnsembleSpec& spec, const Grid& grid);
std::vector<double> gaussian_covariance(const EnsembleSpec& spec, const Grid& grid);

enum class Expectation { Members, Ergodic };

// A finite ensemble of coefficient fields on one grid. Exact ensembles carry
// probability weights; MonteCarlo ensembles carry equal weights 1/M.
struct Ensemble {
  Grid grid;
  std::size_t members = 0;
  std::vector<double> a;  // members * N * d*d
  std::vector<double> b;  // same layout after normalization
  std::vector<double> weights;
  bool exact = true;
  bool normalized = false;
  double delta = 0;
  double C0 = 1;
  bool scalar = true;
  Expectation expectation = Expectation::Members;
  std::optional<EnsembleSpec> spec;
  std::string label;

  int dim() const { return grid.dim(); }
  std::size_t block() const { return grid.size() * dim() * dim(); }
  const double* a_of(std::size_t m) const { return a.data() + m * block(); }
  const double* b_of(std::size_t m) const { return b.data() + m * block(); }
  CoefficientField member(std::size_t m) const;

  // P applied to `comps` site-indexed blocks per member; result has comps*N entries
  // (Members mode) or members*comps*N (Ergodic mode: spatial means broadcast).
  template <class T>
  std::vector<T> expect(const T* data, std::size_t comps) const;
  template <class T>
  void project_perp(T* data, std::size_t comps) const;  // in place, data <- data - P data
};

Ensemble single_member(const CoefficientField& f);
Ensemble monte_carlo(const EnsembleSpec& spec, const Grid& grid, std::size_t count, std::uint64_t seed);
Ensemble enumerate_exact(const EnsembleSpec& spec, const Grid& grid, double max_bits = 24);
// All translates of one periodic field, uniform weights.
Ensemble translates(const CoefficientField& f);
// Periodic tiling of a field (or every member of an ensemble) onto a larger torus.
CoefficientField tile(const CoefficientField& f, const Grid& big);
Ensemble tile(const Ensemble& e, const Grid& big);

struct Normalization {
  Mat3 mean_a{};
  double delta = 0;
  double mean_error = 0;  // 0 on exact / law-based means
  std::string method;
};
// a -> E[a]^{-1/2} a E[a]^{-1/2} = Id + delta b. Uses the law when available.
Normalization normalize(Ensemble& e);

// x (.) y with per-site matrices: out = M(site) v(site), vector fields in block layout.
template <class T>
void apply_coeff(const double* coeff, const T* in, T* out, std::size_t N, int d, bool scalar);

struct CovarianceEntry {
  Site offset;
  double radius;
  Mat3 value{};
  Mat3 stderr_{};
};
// E[b(x) b(x+z)] (matrix product), averaged over base points x; stderr from per-member means.
std::vector<CovarianceEntry> empirical_covariance(const Ensemble& e, int max_radius);

// Flat binary export: row-major sites, row-major d x d entries, little-endian float64.
void export_binary(const CoefficientField& f, const std::string& path);
void export_binary(const std::vector<double>& values, const std::string& path);

}  // namespace hom
