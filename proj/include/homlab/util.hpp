#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hom {

using cplx = std::complex<double>;
using Mat3 = std::array<double, 9>;  // row-major d x d block, d <= 3

// Error families map onto CLI exit codes: ConfigError -> 1, CapacityError -> 3,
// everything else -> 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParameterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IterationLimit : std::runtime_error {
  IterationLimit(const std::string& what, double residual_, double partial_ = NAN)
      : std::runtime_error(what), residual(residual_), partial(partial_) {}
  double residual;
  double partial;
};

// Neumaier compensated accumulator.
template <class T>
class CompensatedSum {
 public:
  void add(T v) {
    if constexpr (std::is_same_v<T, cplx>) {
      re_.add(v.real());
      im_.add(v.imag());
    } else {
      T t = sum_ + v;
      if (std::abs(sum_) >= std::abs(v))
        c_ += (sum_ - t) + v;
      else
        c_ += (v - t) + sum_;
      sum_ = t;
    }
  }
  T value() const {
    if constexpr (std::is_same_v<T, cplx>)
      return {re_.value(), im_.value()};
    else
      return sum_ + c_;
  }

 private:
  T sum_{};
  T c_{};
  struct Part {
    double s = 0, c = 0;
    void add(double v) {
      double t = s + v;
      if (std::abs(s) >= std::abs(v))
        c += (s - t) + v;
      else
        c += (v - t) + s;
      s = t;
    }
    double value() const { return s + c; }
  };
  Part re_, im_;
};

template <class It>
double compensated_sum(It first, It last) {
  CompensatedSum<double> s;
  for (; first != last; ++first) s.add(*first);
  return s.value();
}

// splitmix64 finalizer, used to derive independent substream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double sq(double x) { return x * x; }

}  // namespace hom
