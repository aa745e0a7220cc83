#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "homlab/grid.hpp"

namespace hom {

struct RadialBin {
  double radius = 0;  // radius of the arg-max site in the shell
  double value = 0;   // max |value| over the shell
  double stderr_ = 0;
};

struct FitResult {
  double slope = NAN, intercept = NAN;
  double ci_low = NAN, ci_high = NAN;  // 95% interval on the slope
  double slope_stderr = NAN;
  bool noise_floor = false;
  std::string note;
  std::vector<RadialBin> bins;
  bool ok() const { return !noise_floor && std::isfinite(slope); }
};

// Unit-width shells floor(r) in [r_min, r_max]; `values` / `errors` hold one
// nonnegative number per site (errors may be empty).
std::vector<RadialBin> radial_max_bins(const Grid& grid, const std::vector<double>& values,
                                       const std::vector<double>& errors, double r_min, double r_max);

// Weighted least squares of log(value) on log(radius); weights from relative errors
// when present. Needs >= min_bins bins; bins within 3 stderr of zero trip the noise floor.
FitResult fit_power_law(const std::vector<RadialBin>& bins, std::size_t min_bins = 5);

FitResult fit_decay_exponent(const Grid& grid, const std::vector<double>& values, const std::vector<double>& errors,
                             double r_min, double r_max);

// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hom
