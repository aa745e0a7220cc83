#include "homlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "homlab/corrector.hpp"
#include "homlab/green.hpp"
#include "homlab/homogenize.hpp"
#include "homlab/paths.hpp"
#include "homlab/series.hpp"

#ifndef HOMLAB_VERSION
#define HOMLAB_VERSION "0.0.0"
#endif

namespace hom {

std::string code_version() { return HOMLAB_VERSION; }

bool Validation::capacity_only() const {
  return !violations.empty() &&
         std::all_of(violations.begin(), violations.end(), [](const Violation& v) { return v.capacity; });
}

// ---------------------------------------------------------------------------
// catalog

namespace {

const std::vector<CatalogEntry> kCatalog = {
    {"decay-scan",
     "Radial decay of the averaged n-th series term (ensemble, deterministic pairing, or Gaussian route) "
     "with log-log exponent fits.",
     "averaged kernel terms of the perturbative inverse decay like |x-y|^{-nd} under finite-range "
     "dependence; for independent sites the third term decays like |x-y|^{-3d}",
     "config_hash,order,radius,value,stderr"},
    {"transition-scan",
     "Leading decay exponent of the averaged kernel for power-law correlated Gaussian coefficients, "
     "scanned over the correlation exponent.",
     "for correlations decaying like |x|^{-gamma} the first term decays like |x|^{-(d+gamma)} and the "
     "leading exponent saturates near -3d once correlations decay fast enough",
     "config_hash,gamma,leading_slope,leading_ci_low,leading_ci_high,n1_slope,n1_ci_low,n1_ci_high,n1_predicted"},
    {"tensor-compute",
     "Direction-contracted higher-order homogenized tensors from the massive corrector hierarchy "
     "(mu -> 0) and from finite differences of the effective symbol.",
     "the homogenized tensors are the Taylor coefficients of the effective symbol at zero frequency and "
     "coincide with the mu -> 0 limit of massive corrector averages",
     "config_hash,route,direction,e0,e1,e2,order,value,error"},
    {"rate-check",
     "Relative error of the averaged gradient against the l-th order homogenized proxy across scales eps.",
     "the l-th order effective equation approximates the averaged solution with error O(eps^l)",
     "config_hash,ell,eps,error"},
    {"green-check",
     "Cut-off annealed Green function against the homogenized and corrected homogenized Green functions "
     "in d = 3, with two-grid error bars.",
     "after frequency cutoff the annealed Green function minus its l-th order homogenized approximation "
     "decays like |x|^{2-d-l-|alpha|}",
     "config_hash,field,radius,value,error"},
    {"schur-verify",
     "Mode-wise residuals of the Schur-complement representation of the averaged and fluctuating parts "
     "of the solution on a finite ensemble.",
     "the averaged solution solves the effective equation with the Schur-complement symbol and the "
     "fluctuation is recovered from it exactly",
     "config_hash,metric,value"},
    {"path-audit",
     "Reducible / irreducible classification of sublattice paths, quotient-graph certificates, and "
     "restricted term sums on an exact ensemble.",
     "contributions of reducible index paths vanish under finite range of dependence; irreducible paths "
     "induce quotient graphs with three edge-disjoint source-sink trails",
     "config_hash,section,name,j,k,value"},
    {"weak-corrector-scan",
     "Freeze-and-resample conditional expectation of the n-th corrector at distance |x| from a frozen "
     "ball of radius R0.",
     "conditional expectations of weak correctors are bounded by R0^n (1 + <x/R0>^{n-d+small}): bounded "
     "for n < d, growing for n > d",
     "config_hash,order,ratio,x0,value,stderr"},
};

}  // namespace

const std::vector<CatalogEntry>& list_experiments() { return kCatalog; }

const CatalogEntry& catalog_entry(const std::string& kind) {
  for (const auto& e : kCatalog)
    if (e.kind == kind) return e;
  throw ConfigError("unknown experiment kind '" + kind + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(c.resolved.dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// validation

namespace {

using Check = std::function<std::string(double)>;

Check positive() {
  return [](double v) { return v > 0 ? "" : "must be positive"; };
}
Check at_least(double lo) {
  return [lo](double v) {
    char b[64];
    std::snprintf(b, sizeof b, "must be >= %g", lo);
    return v >= lo ? std::string() : std::string(b);
  };
}
Check in_range(double lo, double hi) {
  return [lo, hi](double v) {
    char b[80];
    std::snprintf(b, sizeof b, "must lie in [%g, %g]", lo, hi);
    return (v >= lo && v <= hi) ? std::string() : std::string(b);
  };
}

class Reader {
 public:
  std::vector<Violation> v;

  void add(const std::string& path, const std::string& msg, bool capacity = false) {
    v.push_back({path.empty() ? "/" : path, msg, capacity});
  }

  const json& object(const json& parent, const std::string& path, const char* key) {
    static const json empty = json::object();
    if (!parent.is_object() || !parent.contains(key)) return empty;
    const json& o = parent.at(key);
    if (!o.is_object()) {
      add(path + "/" + key, "must be an object");
      return empty;
    }
    return o;
  }

  void unknown_keys(const json& o, const std::string& path, const std::set<std::string>& allowed) {
    if (!o.is_object()) return;
    for (auto it = o.begin(); it != o.end(); ++it)
      if (!allowed.count(it.key())) add(path + "/" + it.key(), "unknown key");
  }

  double number(const json& o, const std::string& path, const char* key, double def, const Check& check = {}) {
    if (!o.contains(key)) return def;
    const json& x = o.at(key);
    const std::string p = path + "/" + key;
    if (!x.is_number()) {
      add(p, "must be a number");
      return def;
    }
    double val = x.get<double>();
    if (!std::isfinite(val)) {
      add(p, "must be finite");
      return def;
    }
    if (check) {
      std::string m = check(val);
      if (!m.empty()) add(p, m);
    }
    return val;
  }

  long long integer(const json& o, const std::string& path, const char* key, long long def, const Check& check = {}) {
    if (!o.contains(key)) return def;
    const json& x = o.at(key);
    const std::string p = path + "/" + key;
    if (!x.is_number_integer()) {
      add(p, "must be an integer");
      return def;
    }
    long long val = x.get<long long>();
    if (check) {
      std::string m = check(double(val));
      if (!m.empty()) add(p, m);
    }
    return val;
  }

  bool boolean(const json& o, const std::string& path, const char* key, bool def) {
    if (!o.contains(key)) return def;
    if (!o.at(key).is_boolean()) {
      add(path + "/" + key, "must be true or false");
      return def;
    }
    return o.at(key).get<bool>();
  }

  std::string choice(const json& o, const std::string& path, const char* key, const std::string& def,
                     const std::vector<std::string>& allowed) {
    if (!o.contains(key)) return def;
    const json& x = o.at(key);
    const std::string p = path + "/" + key;
    if (!x.is_string()) {
      add(p, "must be a string");
      return def;
    }
    std::string s = x.get<std::string>();
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string m = "must be one of";
      for (const auto& a : allowed) m += " '" + a + "'";
      add(p, m);
      return def;
    }
    return s;
  }

  std::vector<double> numbers(const json& o, const std::string& path, const char* key, std::vector<double> def,
                              const Check& check = {}, bool integers = false) {
    if (!o.contains(key)) return def;
    const json& x = o.at(key);
    const std::string p = path + "/" + key;
    if (!x.is_array() || x.empty()) {
      add(p, "must be a non-empty list");
      return def;
    }
    std::vector<double> out;
    bool bad = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::string pi = p + "/" + std::to_string(i);
      if (integers ? !x[i].is_number_integer() : !x[i].is_number()) {
        add(pi, integers ? "must be an integer" : "must be a number");
        bad = true;
        continue;
      }
      double val = x[i].get<double>();
      if (check) {
        std::string m = check(val);
        if (!m.empty()) add(pi, m);
      }
      out.push_back(val);
    }
    return bad ? def : out;
  }

  Site site(const json& o, const std::string& path, const char* key, Site def, int dim) {
    if (!o.contains(key)) return def;
    auto vals = numbers(o, path, key, {}, {}, true);
    if (vals.empty()) return def;
    if (static_cast<int>(vals.size()) != dim) {
      add(path + "/" + key, "must have " + std::to_string(dim) + " components");
      return def;
    }
    Site s{0, 0, 0};
    for (int a = 0; a < dim; ++a) s[a] = static_cast<int>(vals[a]);
    return s;
  }
};

std::vector<int> ints(const std::vector<double>& v) {
  std::vector<int> out;
  for (double x : v) out.push_back(static_cast<int>(x));
  return out;
}

json site_json(const Site& s, int dim) {
  json a = json::array();
  for (int i = 0; i < dim; ++i) a.push_back(s[i]);
  return a;
}
Freq freq_of(const json& a) {
  Freq f{0, 0, 0};
  for (std::size_t i = 0; i < a.size() && i < 3; ++i) f[i] = a[i].get<double>();
  return f;
}
Site site_of(const json& a) {
  Site s{0, 0, 0};
  for (std::size_t i = 0; i < a.size() && i < 3; ++i) s[i] = a[i].get<int>();
  return s;
}

json default_modes(int dim) {
  json m = json::array();
  json k0 = json::array(), re0 = json::array(), im0 = json::array();
  for (int a = 0; a < dim; ++a) {
    k0.push_back(a == 0 ? 1 : 0);
    re0.push_back(a == 0 ? 1.0 : (a == 1 ? 0.5 : 0.0));
    im0.push_back(a == 1 ? 0.3 : 0.0);
  }
  m.push_back({{"k", k0}, {"re", re0}, {"im", im0}});
  if (dim >= 2) {
    json k1 = json::array(), re1 = json::array(), im1 = json::array();
    for (int a = 0; a < dim; ++a) {
      k1.push_back(a < 2 ? 1 : 0);
      re1.push_back(a == 0 ? 0.2 : (a == 1 ? -0.4 : 0.0));
      im1.push_back(a == 0 ? 0.1 : 0.0);
    }
    m.push_back({{"k", k1}, {"re", re1}, {"im", im1}});
  }
  return m;
}

// Parameter defaults per kind; depend on the dimension and torus side.
json kind_defaults(const std::string& kind, int dim, int side) {
  // fit windows shrink with small tori so the defaults always pass their own range checks
  const double rq = std::min(std::max(3, side / 4), std::max(1, side / 2));
  if (kind == "decay-scan")
    return {{"method", "ensemble"}, {"orders", {1, 2, 3}}, {"r_min", std::min(2.0, rq / 2)}, {"r_max", rq},
            {"source", site_json({0, 0, 0}, dim)}, {"min_bins", 5}};
  if (kind == "transition-scan")
    return {{"gammas", {1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0}}, {"r_min", std::min(4.0, rq / 2)}, {"r_max", rq}};
  if (kind == "tensor-compute")
    return {{"route", "both"}, {"ell", 2}, {"mus", {1e-1, 3e-2, 1e-2, 3e-3, 1e-3}}, {"step", 0.05}, {"rtol", 1e-12}};
  if (kind == "rate-check")
    return {{"ells", {1, 2}}, {"eps", {0.125, 0.0625, 0.03125, 0.015625}}, {"modes", default_modes(dim)},
            {"tensors", "symbol"}};
  if (kind == "green-check")
    return {{"xi_max", 2.5}, {"sides", {128, 96}}, {"table_side", 48}, {"ell", 2},
            {"alpha", site_json({0, 0, 0}, dim)}, {"r_min", 4.0}, {"r_max", 32.0}};
  if (kind == "schur-verify") return {{"modes", default_modes(dim)}};
  if (kind == "path-audit") {
    Site xn{7, 0, 0};
    return {{"n", 3}, {"box", 2}, {"x0", site_json({0, 0, 0}, dim)}, {"xn", site_json(xn, dim)},
            {"sums", true}, {"sum_x", site_json({0, 0, 0}, dim)}, {"sum_y", site_json({1, 0, 0}, dim)},
            {"torus_guard", true}};
  }
  if (kind == "weak-corrector-scan")
    return {{"orders", {1, 3}}, {"R0", 2}, {"ratios", {1, 2, 3, 4, 5, 6, 7, 8}}, {"resamples", 64},
            {"direction", site_json({1, 0, 0}, dim)}, {"series_terms", 0}};
  throw ConfigError("unknown experiment kind '" + kind + "'");
}

double exact_bits(const EnsembleSpec& spec, const Grid& g) {
  double units = double(g.size());
  if (spec.model == Model::BlockIndependent && spec.block > 0) units /= std::pow(spec.block, g.dim());
  double bits = units * std::log2(double(std::max<std::size_t>(spec.law.size(), 1)));
  if (spec.model == Model::BlockIndependent && spec.random_offset) bits += g.dim() * std::log2(double(spec.block));
  return bits;
}

std::string count_text(double bits) {
  if (bits < 63.5) return std::to_string(static_cast<unsigned long long>(std::llround(std::exp2(bits))));
  char b[64];
  std::snprintf(b, sizeof b, "%.6g", std::exp2(bits));
  return b;
}

void read_modes(Reader& rd, const json& params, const std::string& path, int dim, int side) {
  if (!params.contains("modes")) return;
  const json& m = params.at("modes");
  const std::string p = path + "/modes";
  if (!m.is_array() || m.empty()) {
    rd.add(p, "must be a non-empty list of Fourier modes");
    return;
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::string pi = p + "/" + std::to_string(i);
    if (!m[i].is_object()) {
      rd.add(pi, "must be an object");
      continue;
    }
    rd.unknown_keys(m[i], pi, {"k", "re", "im"});
    Site k = rd.site(m[i], pi, "k", {0, 0, 0}, dim);
    bool nonzero = false;
    for (int a = 0; a < dim; ++a) {
      nonzero |= k[a] != 0;
      if (2 * std::abs(k[a]) >= side) rd.add(pi + "/k", "mode is not resolved below the Nyquist frequency");
    }
    if (!nonzero) rd.add(pi + "/k", "zero mode is not allowed (sources are mean-zero)");
    for (const char* key : {"re", "im"})
      if (m[i].contains(key)) {
        auto v = rd.numbers(m[i], pi, key, {});
        if (!v.empty() && static_cast<int>(v.size()) != dim)
          rd.add(pi + "/" + key, "must have " + std::to_string(dim) + " components");
      }
  }
}

SourceSpec source_of(const json& modes) {
  SourceSpec s;
  for (const auto& m : modes) {
    FourierMode f;
    f.k = site_of(m.at("k"));
    if (m.contains("re")) f.re = freq_of(m.at("re"));
    if (m.contains("im")) f.im = freq_of(m.at("im"));
    s.modes.push_back(f);
  }
  return s;
}

}  // namespace

Validation validate_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    Validation v;
    v.violations.push_back({"/", std::string("invalid JSON: ") + e.what(), false});
    return v;
  }
  return validate_config(doc);
}

Validation validate_config(const json& doc) {
  Validation out;
  Reader rd;
  if (!doc.is_object()) {
    out.violations.push_back({"/", "configuration must be a JSON object", false});
    return out;
  }
  rd.unknown_keys(doc, "", {"experiment", "seed", "workers", "output", "ensemble", "sampling", "grid", "params"});

  ExperimentConfig c;
  if (!doc.contains("experiment")) {
    rd.add("/experiment", "missing experiment kind");
  } else if (!doc.at("experiment").is_string()) {
    rd.add("/experiment", "must be a string");
  } else {
    c.kind = doc.at("experiment").get<std::string>();
    bool known = std::any_of(kCatalog.begin(), kCatalog.end(), [&](const CatalogEntry& e) { return e.kind == c.kind; });
    if (!known) {
      rd.add("/experiment", "unknown experiment kind '" + c.kind + "'");
      c.kind.clear();
    }
  }
  c.seed = static_cast<std::uint64_t>(rd.integer(doc, "", "seed", 1, at_least(0)));
  c.workers = static_cast<int>(rd.integer(doc, "", "workers", 1, in_range(1, 256)));
  if (doc.contains("output")) {
    if (doc.at("output").is_string())
      c.output = doc.at("output").get<std::string>();
    else
      rd.add("/output", "must be a string");
  }

  // ensemble
  const json& ens = rd.object(doc, "", "ensemble");
  const std::string ep = "/ensemble";
  EnsembleSpec& s = c.ensemble;
  std::string model = rd.choice(ens, ep, "model", "iid", {"iid", "block", "gaussian"});
  s.model = model == "iid" ? Model::IidVertex : model == "block" ? Model::BlockIndependent : Model::GaussianPowerLaw;
  s.dim = static_cast<int>(rd.integer(ens, ep, "dim", 1, in_range(1, 3)));
  s.dim = std::clamp(s.dim, 1, 3);
  const int d = s.dim;
  json ens_r = {{"model", model}, {"dim", d}};
  if (s.model == Model::GaussianPowerLaw) {
    rd.unknown_keys(ens, ep, {"model", "dim", "gamma", "delta", "unit_mass_kernel", "C0"});
    s.gamma = rd.number(ens, ep, "gamma", 2.0,
                        [](double g) { return g > 0 ? std::string() : "correlation exponent must be positive"; });
    s.delta = rd.number(ens, ep, "delta", 0.1, [](double x) {
      return (x >= 0 && x < 1) ? std::string() : std::string("delta must lie in [0, 1)");
    });
    s.unit_mass_kernel = rd.boolean(ens, ep, "unit_mass_kernel", false);
    s.C0 = rd.number(ens, ep, "C0", 0.0, at_least(0));
    ens_r.update({{"gamma", s.gamma}, {"delta", s.delta}, {"unit_mass_kernel", s.unit_mass_kernel}, {"C0", s.C0}});
  } else {
    std::set<std::string> allowed{"model", "dim", "values", "matrices", "weights", "C0"};
    if (s.model == Model::BlockIndependent) {
      allowed.insert("block");
      allowed.insert("random_offset");
    }
    rd.unknown_keys(ens, ep, allowed);
    std::vector<Mat3> mats;
    if (ens.contains("values") && ens.contains("matrices")) rd.add(ep, "give either values or matrices, not both");
    if (ens.contains("matrices")) {
      const json& m = ens.at("matrices");
      if (!m.is_array() || m.empty()) rd.add(ep + "/matrices", "must be a non-empty list of d x d matrices");
      else
        for (std::size_t i = 0; i < m.size(); ++i) {
          const std::string pi = ep + "/matrices/" + std::to_string(i);
          Mat3 a{};
          bool ok = m[i].is_array() && static_cast<int>(m[i].size()) == d;
          for (int r = 0; ok && r < d; ++r) {
            ok = m[i][r].is_array() && static_cast<int>(m[i][r].size()) == d;
            for (int cc = 0; ok && cc < d; ++cc) {
              ok = m[i][r][cc].is_number();
              if (ok) a[r * d + cc] = m[i][r][cc].get<double>();
            }
          }
          if (!ok) rd.add(pi, "must be a " + std::to_string(d) + " x " + std::to_string(d) + " matrix of numbers");
          mats.push_back(a);
        }
    } else {
      auto vals = rd.numbers(ens, ep, "values", {0.9, 1.1}, positive());
      for (double x : vals) {
        Mat3 a{};
        for (int k = 0; k < d; ++k) a[k * d + k] = x;
        mats.push_back(a);
      }
    }
    std::vector<double> w(mats.size(), mats.empty() ? 0.0 : 1.0 / mats.size());
    if (ens.contains("weights")) {
      auto ww = rd.numbers(ens, ep, "weights", w, at_least(0));
      if (ww.size() != mats.size())
        rd.add(ep + "/weights", "must have one weight per law entry");
      else
        w = ww;
    }
    for (std::size_t i = 0; i < mats.size(); ++i) s.law.push_back({mats[i], w[i]});
    s.C0 = rd.number(ens, ep, "C0", 0.0, at_least(0));
    if (ens.contains("matrices")) {
      json mj = json::array();
      for (const auto& a : mats) {
        json mm = json::array();
        for (int r = 0; r < d; ++r) {
          json row = json::array();
          for (int cc = 0; cc < d; ++cc) row.push_back(a[r * d + cc]);
          mm.push_back(row);
        }
        mj.push_back(mm);
      }
      ens_r["matrices"] = mj;
    } else {
      json vj = json::array();
      for (const auto& a : mats) vj.push_back(a[0]);
      ens_r["values"] = vj;
    }
    ens_r["weights"] = w;
    ens_r["C0"] = s.C0;
    if (s.model == Model::BlockIndependent) {
      s.block = static_cast<int>(rd.integer(ens, ep, "block", 2, at_least(1)));
      s.random_offset = rd.boolean(ens, ep, "random_offset", false);
      ens_r["block"] = s.block;
      ens_r["random_offset"] = s.random_offset;
    }
    // law-level checks (symmetry, ellipticity, weight sum)
    bool shape_ok = std::none_of(rd.v.begin(), rd.v.end(), [&](const Violation& x) {
      return x.path.rfind(ep + "/matrices", 0) == 0 || x.path.rfind(ep + "/weights", 0) == 0;
    });
    if (shape_ok)
      for (const auto& m : s.violations()) rd.add(ep, m);
  }
  s.seed = c.seed;

  // sampling
  const json& smp = rd.object(doc, "", "sampling");
  const std::string sp = "/sampling";
  rd.unknown_keys(smp, sp, {"kind", "samples", "max_bits"});
  const std::string default_kind = s.model == Model::GaussianPowerLaw ? "monte-carlo" : "exact";
  c.sampling.kind = rd.choice(smp, sp, "kind", default_kind, {"exact", "monte-carlo", "translates", "single"});
  c.sampling.samples = static_cast<std::size_t>(rd.integer(smp, sp, "samples", 16, at_least(1)));
  c.sampling.max_bits = rd.number(smp, sp, "max_bits", 24, in_range(1, 40));

  // grid
  const json& gr = rd.object(doc, "", "grid");
  const std::string gp = "/grid";
  rd.unknown_keys(gr, gp, {"side", "R"});
  c.side = static_cast<int>(rd.integer(gr, gp, "side", 4, in_range(2, 4096)));
  c.R = static_cast<int>(rd.integer(gr, gp, "R", 1, at_least(1)));
  if (c.R >= 1 && c.side >= 2 && c.side % c.R != 0) rd.add(gp + "/R", "must divide the torus side");
  if (s.model == Model::BlockIndependent && s.block >= 1 && c.side % s.block != 0)
    rd.add(ep + "/block", "block size must divide the torus side");

  // capacity guards on the ensemble
  if (c.side >= 2 && c.side <= 4096) {
    const double sites = std::pow(double(c.side), d);
    if (c.sampling.kind == "exact") {
      if (s.model == Model::GaussianPowerLaw)
        rd.add(sp + "/kind", "Gaussian laws have no finite support to enumerate");
      else if (!s.law.empty()) {
        Grid g = Grid::cube(d, c.side, 1);
        double bits = exact_bits(s, g);
        if (bits > c.sampling.max_bits + 1e-9) {
          char b[64];
          std::snprintf(b, sizeof b, "2^%.2f", bits);
          rd.add(sp + "/kind",
                 "exact enumeration of " + count_text(bits) + " states (" + b + ") exceeds the capacity 2^" +
                     std::to_string(static_cast<int>(c.sampling.max_bits)),
                 true);
        } else if (std::exp2(bits) * sites * d * d > double(std::size_t(1) << 28))
          rd.add(sp + "/kind", "exact ensemble of " + count_text(bits) + " states exceeds the memory guard", true);
      }
    } else {
      double members = c.sampling.kind == "monte-carlo" ? double(c.sampling.samples)
                       : c.sampling.kind == "translates" ? sites
                                                          : 1.0;
      if (members * sites * d * d > double(std::size_t(1) << 28))
        rd.add(sp + "/samples", "ensemble of " + count_text(std::log2(members)) + " members on " +
                                    count_text(std::log2(sites)) + " sites exceeds the memory guard",
               true);
    }
  }

  // params
  const json& prm = rd.object(doc, "", "params");
  const std::string pp = "/params";
  json P;
  if (!c.kind.empty()) {
    P = kind_defaults(c.kind, d, c.side);
    std::set<std::string> allowed;
    for (auto it = P.begin(); it != P.end(); ++it) allowed.insert(it.key());
    rd.unknown_keys(prm, pp, allowed);
    auto set = [&](const char* key, json value) { P[key] = std::move(value); };
    const double L = c.side;
    if (c.kind == "decay-scan") {
      set("method", rd.choice(prm, pp, "method", "ensemble", {"ensemble", "pairing", "gaussian"}));
      set("orders", ints(rd.numbers(prm, pp, "orders", P["orders"].get<std::vector<double>>(), in_range(1, 6), true)));
      set("r_min", rd.number(prm, pp, "r_min", P["r_min"].get<double>(), positive()));
      set("r_max", rd.number(prm, pp, "r_max", P["r_max"].get<double>(), in_range(0, L / 2)));
      set("source", site_json(rd.site(prm, pp, "source", {0, 0, 0}, d), d));
      set("min_bins", rd.integer(prm, pp, "min_bins", 5, at_least(3)));
      if (P["r_max"].get<double>() <= P["r_min"].get<double>()) rd.add(pp + "/r_max", "must exceed r_min");
      if (P["method"] == "gaussian" && s.model != Model::GaussianPowerLaw)
        rd.add(pp + "/method", "the Gaussian route needs a gaussian ensemble");
    } else if (c.kind == "transition-scan") {
      set("gammas", rd.numbers(prm, pp, "gammas", P["gammas"].get<std::vector<double>>(),
                               [](double g) { return g > 0 ? std::string() : "correlation exponent must be positive"; }));
      set("r_min", rd.number(prm, pp, "r_min", P["r_min"].get<double>(), positive()));
      set("r_max", rd.number(prm, pp, "r_max", P["r_max"].get<double>(), in_range(0, L / 2)));
      if (P["r_max"].get<double>() <= P["r_min"].get<double>()) rd.add(pp + "/r_max", "must exceed r_min");
      if (s.model != Model::GaussianPowerLaw) rd.add(ep + "/model", "transition-scan needs a gaussian ensemble");
    } else if (c.kind == "tensor-compute") {
      set("route", rd.choice(prm, pp, "route", "both", {"both", "massive", "symbol"}));
      set("ell", rd.integer(prm, pp, "ell", 2, in_range(1, 4)));
      set("mus", rd.numbers(prm, pp, "mus", P["mus"].get<std::vector<double>>(), positive()));
      set("step", rd.number(prm, pp, "step", 0.05, in_range(1e-4, 0.5)));
      set("rtol", rd.number(prm, pp, "rtol", 1e-12, in_range(1e-15, 1e-3)));
      if (P["mus"].size() < 3) rd.add(pp + "/mus", "Richardson extrapolation needs at least 3 values");
    } else if (c.kind == "rate-check") {
      set("ells", ints(rd.numbers(prm, pp, "ells", {1, 2}, in_range(1, 2), true)));
      set("eps", rd.numbers(prm, pp, "eps", P["eps"].get<std::vector<double>>(), [](double e) {
        double inv = 1.0 / e;
        return (e > 0 && e <= 1 && std::abs(inv - std::round(inv)) < 1e-9) ? std::string()
                                                                           : std::string("must be 1/integer in (0, 1]");
      }));
      if (P["eps"].size() < 4) rd.add(pp + "/eps", "the rate fit needs at least 4 scales");
      read_modes(rd, prm, pp, d, c.side);
      if (prm.contains("modes")) P["modes"] = prm.at("modes");
      set("tensors", rd.choice(prm, pp, "tensors", "symbol", {"symbol", "massive"}));
      for (double e : P["eps"].get<std::vector<double>>())
        if (e > 0 && std::pow(c.side / e, d) > 4.2e6) {
          rd.add(pp + "/eps", "refined torus for eps = " + std::to_string(e) + " exceeds the size guard", true);
          break;
        }
    } else if (c.kind == "green-check") {
      set("xi_max", rd.number(prm, pp, "xi_max", 2.5, positive()));
      set("sides", ints(rd.numbers(prm, pp, "sides", {128, 96}, at_least(8), true)));
      set("table_side", rd.integer(prm, pp, "table_side", 48, at_least(4)));
      set("ell", rd.integer(prm, pp, "ell", 2, in_range(1, 2 * d)));
      set("alpha", site_json(rd.site(prm, pp, "alpha", {0, 0, 0}, d), d));
      set("r_min", rd.number(prm, pp, "r_min", 4.0, positive()));
      set("r_max", rd.number(prm, pp, "r_max", 32.0, positive()));
      GreenConfig gc;
      gc.dim = d;
      gc.xi_max = P["xi_max"].get<double>();
      gc.alpha = site_of(P["alpha"]);
      gc.ell = P["ell"].get<int>();
      gc.sides = P["sides"].get<std::vector<int>>();
      try {
        gc.validate();
      } catch (const std::exception& e) {
        rd.add(pp, e.what());
      }
      for (int sd : gc.sides)
        if (std::pow(double(sd), d) * d * d > 4.0e7) rd.add(pp + "/sides", "evaluation grid exceeds the size guard", true);
      if (s.model == Model::GaussianPowerLaw) rd.add(ep + "/model", "green-check needs a finite-support law");
    } else if (c.kind == "schur-verify") {
      read_modes(rd, prm, pp, d, c.side);
      if (prm.contains("modes")) P["modes"] = prm.at("modes");
      if (c.sampling.kind != "exact" && c.sampling.kind != "translates")
        rd.add(sp + "/kind", "schur-verify needs an exact or translates ensemble");
    } else if (c.kind == "path-audit") {
      set("n", rd.integer(prm, pp, "n", 3, in_range(1, 6)));
      set("box", rd.integer(prm, pp, "box", 2, at_least(0)));
      set("x0", site_json(rd.site(prm, pp, "x0", {0, 0, 0}, d), d));
      set("xn", site_json(rd.site(prm, pp, "xn", site_of(P["xn"]), d), d));
      set("sums", rd.boolean(prm, pp, "sums", true));
      set("sum_x", site_json(rd.site(prm, pp, "sum_x", {0, 0, 0}, d), d));
      set("sum_y", site_json(rd.site(prm, pp, "sum_y", site_of(P["sum_y"]), d), d));
      set("torus_guard", rd.boolean(prm, pp, "torus_guard", true));
      const int n = P["n"], box = P["box"];
      const double per_axis = 2.0 * (box / c.R) + 1;
      const double count = std::pow(per_axis, double(d) * (n - 1));
      if (count > 1e8) rd.add(pp + "/box", "path enumeration of " + count_text(std::log2(count)) + " paths exceeds the capacity 1e8", true);
      if (P["sums"].get<bool>()) {
        if (c.sampling.kind != "exact") rd.add(pp + "/sums", "restricted sums need an exact ensemble");
        if (n > 4) rd.add(pp + "/n", "restricted sums support n <= 4");
        const double coarse = std::pow(double(c.side / std::max(c.R, 1)), double(d) * (n - 1));
        if (coarse > 1e7) rd.add(pp + "/sums", "restricted sum over " + count_text(std::log2(coarse)) + " paths exceeds the capacity 1e7", true);
      }
    } else if (c.kind == "weak-corrector-scan") {
      set("orders", ints(rd.numbers(prm, pp, "orders", {1, 3}, in_range(1, 4), true)));
      set("R0", rd.integer(prm, pp, "R0", 2, at_least(1)));
      set("ratios", ints(rd.numbers(prm, pp, "ratios", P["ratios"].get<std::vector<double>>(), positive(), true)));
      set("resamples", rd.integer(prm, pp, "resamples", 64, at_least(2)));
      set("direction", site_json(rd.site(prm, pp, "direction", {1, 0, 0}, d), d));
      set("series_terms", rd.integer(prm, pp, "series_terms", 0, at_least(0)));
      const int R0 = P["R0"];
      double rmax = 0;
      for (double r : P["ratios"].get<std::vector<double>>()) rmax = std::max(rmax, r);
      if ((rmax + 1) * R0 > 3.0 * c.side / 16.0 + 1e-9)
        rd.add(pp + "/ratios", "largest |x| + R0 must stay within 3/16 of the torus side");
      if (s.model == Model::GaussianPowerLaw && !(s.delta > 0)) rd.add(ep + "/delta", "must be positive");
    }
  }

  out.violations = rd.v;
  if (!out.violations.empty()) return out;
  c.params = P;
  c.resolved = {{"experiment", c.kind},
                {"seed", c.seed},
                {"workers", c.workers},
                {"output", c.output},
                {"ensemble", ens_r},
                {"sampling", {{"kind", c.sampling.kind}, {"samples", c.sampling.samples}, {"max_bits", c.sampling.max_bits}}},
                {"grid", {{"side", c.side}, {"R", c.R}}},
                {"params", P}};
  out.config = c;
  return out;
}

json describe_experiment(const std::string& kind) {
  const auto& e = catalog_entry(kind);
  return {{"kind", e.kind},
          {"summary", e.summary},
          {"anchor", e.anchor},
          {"columns", e.columns},
          {"defaults (d=2, side=64)", kind_defaults(kind, 2, 64)}};
}

// ---------------------------------------------------------------------------
// running

Ensemble build_ensemble(const ExperimentConfig& c) {
  const Grid g = c.grid();
  const EnsembleSpec& s = c.ensemble;
  Ensemble e;
  if (c.sampling.kind == "exact") {
    e = enumerate_exact(s, g, c.sampling.max_bits);
  } else if (c.sampling.kind == "monte-carlo") {
    e = monte_carlo(s, g, c.sampling.samples, c.seed);
    // correctors and tensors: each sample is its own periodic medium
    if (c.kind == "tensor-compute" || c.kind == "rate-check" || c.kind == "green-check")
      e.expectation = Expectation::Ergodic;
  } else if (c.sampling.kind == "translates") {
    e = translates(sample_field(s, g, c.seed));
  } else {
    e = single_member(sample_field(s, g, c.seed));
    e.spec = s;
  }
  normalize(e);
  return e;
}

namespace {

std::string g17(double x) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", x);
  return b;
}

// Index-ordered parallel map: results do not depend on the worker count.
template <class T>
std::vector<T> parallel_map(std::size_t n, int workers, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errs(n);
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 1; t < w; ++t) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

class Table {
 public:
  Table(std::string header, std::string hash) : header_(std::move(header)), hash_(std::move(hash)) {}
  void row(const std::vector<std::string>& cells) {
    std::string line = hash_;
    for (const auto& c : cells) line += "," + c;
    rows_.push_back(line);
  }
  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << header_ << "\n";
    for (const auto& r : rows_) f << r << "\n";
  }

 private:
  std::string header_, hash_;
  std::vector<std::string> rows_;
};

struct Run {
  const ExperimentConfig& c;
  std::string hash;
  json results = json::array();
  json warnings = json::array();
  Table table;

  void metric(const std::string& name, double value, const std::string& origin, json extra = json::object()) {
    json m = {{"metric", name}, {"value", std::isfinite(value) ? json(value) : json(g17(value))}, {"origin", origin}};
    m.update(extra);
    results.push_back(m);
  }
  void warn(const std::string& w) { warnings.push_back(w); }
  json fit_json(const FitResult& f) const {
    return {{"slope", std::isfinite(f.slope) ? json(f.slope) : json(nullptr)},
            {"ci_low", std::isfinite(f.ci_low) ? json(f.ci_low) : json(nullptr)},
            {"ci_high", std::isfinite(f.ci_high) ? json(f.ci_high) : json(nullptr)},
            {"bins", f.bins.size()},
            {"noise_floor", f.noise_floor},
            {"note", f.note}};
  }
};

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

void run_decay(Run& r) {
  const auto& P = r.c.params;
  const std::string method = P["method"];
  const double rmin = P["r_min"], rmax = P["r_max"];
  const std::size_t min_bins = P["min_bins"].get<std::size_t>();
  auto emit = [&](int order, const KernelTable& k) {
    auto norms = k.site_norms();
    auto errs = k.site_errors();
    auto bins = radial_max_bins(k.grid, norms, errs, rmin, rmax);
    for (const auto& b : bins) r.table.row({std::to_string(order), g17(b.radius), g17(b.value), g17(b.stderr_)});
    if (all_zero(norms)) {
      r.warn("noise floor: exact zero (order " + std::to_string(order) + ")");
      r.metric("order " + std::to_string(order) + " decay exponent", NAN, "fit", {{"note", "noise floor: exact zero"}});
      return;
    }
    FitResult f = fit_power_law(bins, min_bins);
    if (f.noise_floor) r.warn("noise floor reached for order " + std::to_string(order) + ": " + f.note);
    r.metric("order " + std::to_string(order) + " decay exponent", f.slope, "fit", r.fit_json(f));
  };
  const Grid g = r.c.grid();
  if (method == "pairing") {
    emit(3, pairing_kernel_n3(g));
  } else if (method == "gaussian") {
    auto gt = gaussian_terms(r.c.ensemble, g);
    emit(1, gt.T1);
    emit(3, gt.T3);
    r.metric("predicted order 1 exponent", -(g.dim() + r.c.ensemble.gamma), "formula");
  } else {
    Ensemble e = build_ensemble(r.c);
    if (!e.exact) r.warn("periodization: Monte Carlo means on a finite torus");
    int nmax = 0;
    for (double o : P["orders"].get<std::vector<double>>()) nmax = std::max(nmax, int(o));
    auto ks = term_kernels(e, nmax, site_of(P["source"]));
    for (double o : P["orders"].get<std::vector<double>>()) emit(int(o), ks[int(o) - 1]);
    r.metric("delta", e.delta, "normalization");
  }
}

void run_transition(Run& r) {
  const auto& P = r.c.params;
  auto gammas = P["gammas"].get<std::vector<double>>();
  const int d = r.c.ensemble.dim;
  // one scan: the kernel tables are shared across gammas
  auto rows = transition_scan(d, gammas, r.c.ensemble.delta, r.c.side, P["r_min"], P["r_max"]).rows;
  for (const auto& row : rows) {
    r.table.row({g17(row.gamma), g17(row.leading.slope), g17(row.leading.ci_low), g17(row.leading.ci_high),
                 g17(row.n1.slope), g17(row.n1.ci_low), g17(row.n1.ci_high), g17(-(d + row.gamma))});
    r.metric("gamma " + g17(row.gamma) + " leading exponent", row.leading.slope, "fit", r.fit_json(row.leading));
    r.metric("gamma " + g17(row.gamma) + " first-term exponent", row.n1.slope, "fit", r.fit_json(row.n1));
  }
  r.metric("saturation gamma", saturation_gamma(rows, d), "fit");
}

void run_tensors(Run& r) {
  const auto& P = r.c.params;
  Ensemble e = build_ensemble(r.c);
  if (!e.exact) r.warn("periodization: tensors on Monte Carlo samples treat each sample as a periodic medium");
  const std::string route = P["route"];
  const int ell = P["ell"];
  std::vector<std::string> routes;
  if (route != "symbol") routes.push_back("massive");
  if (route != "massive") routes.push_back("symbol");
  auto sets = parallel_map<TensorSet>(routes.size(), r.c.workers, [&](std::size_t i) {
    if (routes[i] == "massive") return tensors_massive(e, ell, P["mus"].get<std::vector<double>>(), P["rtol"]);
    return tensors_from_symbol(e, ell, P["step"]);
  });
  for (std::size_t ri = 0; ri < routes.size(); ++ri) {
    const auto& t = sets[ri];
    for (const auto& n : t.notes) r.warn(routes[ri] + ": " + n);
    for (std::size_t di = 0; di < t.directions.size(); ++di)
      for (int n = 1; n <= t.ell; ++n) {
        const auto& dir = t.directions[di];
        r.table.row({routes[ri], std::to_string(di), g17(dir[0]), g17(dir[1]), g17(dir[2]), std::to_string(n),
                     g17(t.contracted[di][n - 1]), g17(t.error[di][n - 1])});
      }
    Mat3 a1 = t.a1();
    r.metric(routes[ri] + " abar1[0][0]", a1[0], "estimate");
  }
  if (sets.size() == 2) {
    double worst = 0;
    for (std::size_t di = 0; di < sets[0].directions.size() && di < sets[1].directions.size(); ++di)
      for (int n = 1; n <= ell; ++n) {
        double diff = std::abs(sets[0].contracted[di][n - 1] - sets[1].contracted[di][n - 1]);
        double tol = std::abs(sets[0].error[di][n - 1]) + std::abs(sets[1].error[di][n - 1]);
        worst = std::max(worst, tol > 0 ? diff / tol : (diff == 0 ? 0 : INFINITY));
      }
    r.metric("route disagreement / combined error (max)", worst, "comparison");
  }
}

void run_rates(Run& r) {
  const auto& P = r.c.params;
  Ensemble cell = build_ensemble(r.c);
  const auto ells = P["ells"].get<std::vector<int>>();
  const auto eps = P["eps"].get<std::vector<double>>();
  const int ell_max = *std::max_element(ells.begin(), ells.end());
  TensorSet t = P["tensors"] == "massive" ? tensors_massive(cell, ell_max) : tensors_from_symbol(cell, ell_max);
  SourceSpec f = source_of(P["modes"]);
  auto res = parallel_map<RateResult>(ells.size(), r.c.workers,
                                      [&](std::size_t i) { return error_rate(cell, t, f, eps, ells[i]); });
  for (std::size_t i = 0; i < ells.size(); ++i) {
    for (std::size_t k = 0; k < res[i].eps.size(); ++k)
      r.table.row({std::to_string(ells[i]), g17(res[i].eps[k]), g17(res[i].error[k])});
    json extra = r.fit_json(res[i].fit);
    extra["exact"] = res[i].exact;
    if (res[i].exact) r.warn("ell " + std::to_string(ells[i]) + ": errors at round-off (exact)");
    r.metric("ell " + std::to_string(ells[i]) + " fitted order", res[i].order(), "fit", extra);
  }
}

void run_green(Run& r) {
  const auto& P = r.c.params;
  Ensemble e = build_ensemble(r.c);
  GreenConfig gc;
  gc.dim = r.c.ensemble.dim;
  gc.xi_max = P["xi_max"].get<double>();
  gc.alpha = site_of(P["alpha"]);
  gc.ell = P["ell"].get<int>();
  gc.sides = P["sides"].get<std::vector<int>>();
  SymbolTable sym = symbol_table_bloch(e, Grid::cube(gc.dim, P["table_side"].get<int>()));
  TensorSet t = tensors_from_symbol(e, std::max(1, gc.ell));
  GreenTable tab = annealed_green(sym, t, gc, e.C0);
  for (const auto& n : tab.notes) r.warn(n);
  const double rmin = P["r_min"], rmax = P["r_max"];
  auto field = [&](const std::string& name, const GreenField& gf) {
    std::vector<double> mag(gf.value.size()), err(gf.error.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(gf.value[i]);
    for (std::size_t i = 0; i < err.size(); ++i) err[i] = gf.error[i];
    auto bins = radial_max_bins(tab.grid, mag, err, rmin, rmax);
    for (const auto& b : bins) r.table.row({name, g17(b.radius), g17(b.value), g17(b.stderr_)});
    FitResult fit = fit_power_law(bins);
    r.metric(name + " decay exponent", fit.slope, "fit", r.fit_json(fit));
  };
  field("G", tab.G);
  field("Gbar", tab.Gbar);
  field("G-Gbar", tab.diff_bar);
  field("G-Gell", tab.diff_ell);
  r.metric("ellipticity margin", tab.ellipticity_margin, "diagnostic");
  r.metric("symbol max |Im m|", sym.max_imag_m, "diagnostic");
}

void run_schur(Run& r) {
  Ensemble e = build_ensemble(r.c);
  SchurResult s = verify_schur(e, source_of(r.c.params["modes"]));
  if (s.regularized) r.warn("regularization: Schur complement solved with a mass term");
  r.table.row({"homogenized_residual", g17(s.homogenized_residual)});
  r.table.row({"fluctuation_residual", g17(s.fluctuation_residual)});
  r.table.row({"modes", std::to_string(s.modes)});
  r.metric("homogenized-equation residual", s.homogenized_residual, "identity");
  r.metric("fluctuation residual", s.fluctuation_residual, "identity");
}

void run_paths(Run& r) {
  const auto& P = r.c.params;
  const int d = r.c.ensemble.dim, n = P["n"], R = r.c.R;
  const Site x0 = site_of(P["x0"]), xn = site_of(P["xn"]);
  long long graphs = 0, parity = 0, flow3 = 0;
  int min_flow = 1 << 30;
  // box centred on the R-sublattice point nearest the midpoint of the endpoints
  Site mid{0, 0, 0};
  for (int a = 0; a < d; ++a) mid[a] = R * static_cast<int>(std::floor((x0[a] + xn[a]) / (2.0 * R) + 0.5));
  auto tally = enumerate_paths(d, n, P["box"], R, x0, xn, mid, [&](const PathRecord& p, const Classification& c) {
    if (c.reducible) return;
    auto full = classify(p, true);
    if (!full.graph) return;  // endpoints too close for the certificate
    ++graphs;
    parity += full.graph->parity_ok;
    flow3 += full.graph->max_flow >= 3;
    min_flow = std::min(min_flow, full.graph->max_flow);
  });
  auto put = [&](const std::string& section, const std::string& name, double v) {
    r.table.row({section, name, "-1", "-1", g17(v)});
  };
  put("tally", "total", double(tally.total));
  put("tally", "reducible", double(tally.reducible));
  put("tally", "irreducible", double(tally.irreducible));
  put("quotient", "graphs", double(graphs));
  put("quotient", "parity_ok", double(parity));
  put("quotient", "max_flow_ge_3", double(flow3));
  r.metric("reducible paths", double(tally.reducible), "count");
  r.metric("irreducible paths", double(tally.irreducible), "count");
  r.metric("quotient graphs with parity", double(parity), "count", {{"of", graphs}});
  r.metric("quotient graphs with 3 disjoint trails", double(flow3), "count",
           {{"of", graphs}, {"min_max_flow", graphs ? min_flow : 0}});
  if (!P["sums"].get<bool>()) return;
  Ensemble e = build_ensemble(r.c);
  const Site sx = site_of(P["sum_x"]), sy = site_of(P["sum_y"]);
  const bool guard = P["torus_guard"];
  RestrictedSum all = restricted_term_sum(e, n, sx, sy, PathSelector::All, guard);
  RestrictedSum red = restricted_term_sum(e, n, sx, sy, PathSelector::Reducible, guard);
  RestrictedSum irr = restricted_term_sum(e, n, sx, sy, PathSelector::Irreducible, guard);
  double red_max = 0, partition = 0;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) {
      const std::size_t i = j * d + k;
      r.table.row({"sum", "all", std::to_string(j), std::to_string(k), g17(all.value[i])});
      r.table.row({"sum", "reducible", std::to_string(j), std::to_string(k), g17(red.value[i])});
      r.table.row({"sum", "irreducible", std::to_string(j), std::to_string(k), g17(irr.value[i])});
      red_max = std::max(red_max, std::abs(red.value[i]));
      partition = std::max(partition, std::abs(all.value[i] - red.value[i] - irr.value[i]));
    }
  r.metric("max |reducible-only sum|", red_max, "sum", {{"paths", red.paths}});
  r.metric("partition defect", partition, "sum", {{"paths", all.paths}});
}

void run_weak(Run& r) {
  const auto& P = r.c.params;
  const EnsembleSpec& s = r.c.ensemble;
  const Grid g = r.c.grid();
  Ensemble one = single_member(sample_field(s, g, r.c.seed));
  one.spec = s;
  normalize(one);
  CoefficientField frozen = one.member(0);
  frozen.b = one.b;
  frozen.delta = one.delta;
  const auto orders = P["orders"].get<std::vector<int>>();
  const auto ratios = P["ratios"].get<std::vector<int>>();
  const int R0 = P["R0"];
  Freq dir = freq_of(P["direction"]);
  double nrm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  for (auto& x : dir) x /= nrm;
  WeakCorrectorOptions o;
  o.resamples = P["resamples"];
  o.series_terms = P["series_terms"];
  o.seed = mix_seed(r.c.seed, 7);
  const std::size_t jobs = orders.size() * ratios.size();
  auto res = parallel_map<WeakCorrectorResult>(jobs, r.c.workers, [&](std::size_t i) {
    int n = orders[i / ratios.size()], q = ratios[i % ratios.size()];
    Site x{0, 0, 0};
    for (int a = 0; a < g.dim(); ++a) x[a] = static_cast<int>(std::lround(q * R0 * dir[a]));
    return weak_corrector(s, frozen, n, dir, x, R0, o);
  });
  for (std::size_t oi = 0; oi < orders.size(); ++oi) {
    std::vector<double> xs, mags;
    for (std::size_t qi = 0; qi < ratios.size(); ++qi) {
      const auto& w = res[oi * ratios.size() + qi];
      r.table.row({std::to_string(orders[oi]), std::to_string(ratios[qi]), std::to_string(ratios[qi] * R0),
                   g17(w.value), g17(w.stderr_)});
      xs.push_back(ratios[qi]);
      mags.push_back(std::abs(w.value));
    }
    double mx = *std::max_element(mags.begin(), mags.end()), mn = *std::min_element(mags.begin(), mags.end());
    std::string tag = "order " + std::to_string(orders[oi]);
    r.metric(tag + " max/min magnitude", mn > 0 ? mx / mn : INFINITY, "statistic");
    r.metric(tag + " Spearman(ratio, magnitude)", spearman(xs, mags), "statistic");
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& c, const std::string& out_dir) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  RunOutcome out;
  const std::string dir = out_dir.empty() ? c.output : out_dir;
  fs::create_directories(dir);
  const std::string hash = config_hash(c);
  const auto& entry = catalog_entry(c.kind);
  out.manifest = {{"experiment", c.kind},
                  {"config_hash", hash},
                  {"code_version", code_version()},
                  {"config", c.resolved},
                  {"status", "running"},
                  {"results", json::array()},
                  {"warnings", json::array()},
                  {"files", json::array()},
                  {"timings", json::object()}};
  out.manifest_path = (fs::path(dir) / "manifest.json").string();
  write_json(out.manifest_path, out.manifest);

  Run run{c, hash, json::array(), json::array(), Table(entry.columns, hash)};
  const auto t0 = clock::now();
  std::string stage = "run";
  try {
    if (c.kind == "decay-scan") run_decay(run);
    else if (c.kind == "transition-scan") run_transition(run);
    else if (c.kind == "tensor-compute") run_tensors(run);
    else if (c.kind == "rate-check") run_rates(run);
    else if (c.kind == "green-check") run_green(run);
    else if (c.kind == "schur-verify") run_schur(run);
    else if (c.kind == "path-audit") run_paths(run);
    else if (c.kind == "weak-corrector-scan") run_weak(run);
    stage = "write";
    const std::string csv = (fs::path(dir) / (c.kind + ".csv")).string();
    run.table.write(csv);
    out.files.push_back(csv);
    out.manifest["status"] = "ok";
  } catch (const ConfigError& e) {
    out.exit_code = 1;
    out.manifest["status"] = "error";
    out.manifest["failure"] = {{"stage", stage}, {"kind", "config"}, {"message", e.what()}};
  } catch (const CapacityError& e) {
    out.exit_code = 3;
    out.manifest["status"] = "error";
    out.manifest["failure"] = {{"stage", stage}, {"kind", "capacity"}, {"message", e.what()}};
  } catch (const std::exception& e) {
    out.exit_code = 2;
    out.manifest["status"] = "error";
    out.manifest["failure"] = {{"stage", stage}, {"kind", "runtime"}, {"message", e.what()}};
  }
  out.manifest["results"] = run.results;
  out.manifest["warnings"] = run.warnings;
  for (const auto& f : out.files) out.manifest["files"].push_back(fs::path(f).filename().string());
  out.manifest["timings"] = {{"run_seconds", std::chrono::duration<double>(clock::now() - t0).count()},
                             {"workers", c.workers}};
  write_json(out.manifest_path, out.manifest);
  return out;
}

}  // namespace hom
