#include "homlab/fit.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <map>
#include <numeric>

#include "homlab/util.hpp"

namespace hom {

std::vector<RadialBin> radial_max_bins(const Grid& grid, const std::vector<double>& values,
                                       const std::vector<double>& errors, double r_min, double r_max) {
  std::map<long, RadialBin> shells;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double r = grid.radius(grid.min_image(grid.coords(i)));
    if (r < r_min || r > r_max) continue;
    long key = static_cast<long>(std::floor(r));
    double v = std::abs(values[i]);
    auto it = shells.find(key);
    if (it == shells.end() || v > it->second.value || (v == it->second.value && r < it->second.radius))
      shells[key] = RadialBin{r, v, errors.empty() ? 0.0 : errors[i]};
  }
  std::vector<RadialBin> out;
  for (auto& [k, b] : shells) out.push_back(b);
  return out;
}

FitResult fit_power_law(const std::vector<RadialBin>& bins, std::size_t min_bins) {
  FitResult f;
  f.bins = bins;
  if (bins.size() < std::max<std::size_t>(min_bins, 3)) {
    f.noise_floor = true;
    f.note = "too few bins";
    return f;
  }
  bool all_zero = std::all_of(bins.begin(), bins.end(), [](const RadialBin& b) { return b.value == 0; });
  if (all_zero) {
    f.noise_floor = true;
    f.note = "noise floor: exact zero";
    return f;
  }
  for (const auto& b : bins)
    if (b.value <= 0 || b.value <= 3 * b.stderr_) {
      f.noise_floor = true;
      f.note = "noise floor: bin at r=" + std::to_string(b.radius) + " within 3 stderr of zero";
      return f;
    }
  const std::size_t n = bins.size();
  std::vector<double> x(n), y(n), w(n);
  bool have_err = std::any_of(bins.begin(), bins.end(), [](const RadialBin& b) { return b.stderr_ > 0; });
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::log(bins[i].radius);
    y[i] = std::log(bins[i].value);
    // 1% model floor: deterministic error bars are tiny and would otherwise pin the fit to
    // the innermost bins, where pre-asymptotic curvature lives
    double rel = bins[i].stderr_ / bins[i].value;
    w[i] = have_err ? 1.0 / (rel * rel + 1e-4) : 1.0;
  }
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += w[i] * sq(x[i] - mx);
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) {
    f.noise_floor = true;
    f.note = "degenerate abscissa";
    return f;
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < n; ++i) rss += w[i] * sq(y[i] - f.intercept - f.slope * x[i]);
  const double dof = double(n) - 2;
  // scale by the residual variance (weights are relative)
  f.slope_stderr = std::sqrt(rss / dof / sxx);
  boost::math::students_t dist(dof);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.ci_low = f.slope - t * f.slope_stderr;
  f.ci_high = f.slope + t * f.slope_stderr;
  return f;
}

FitResult fit_decay_exponent(const Grid& grid, const std::vector<double>& values, const std::vector<double>& errors,
                             double r_min, double r_max) {
  return fit_power_law(radial_max_bins(grid, values, errors, r_min, r_max));
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * (i + j);
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += sq(rx[i] - mx);
    syy += sq(ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace hom
