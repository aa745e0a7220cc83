#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "homlab/util.hpp"

namespace hom {

struct CgResult {
  int iterations = 0;
  double relative_residual = 0;
  bool converged = false;
};

// Preconditioned conjugate gradient for a Hermitian positive (semi)definite
// operator. `dot` must be the inner product in which A and Minv are self-adjoint.
template <class T>
CgResult pcg(const std::function<void(const T*, T*)>& A, const std::function<void(const T*, T*)>& Minv,
             const std::function<cplx(const T*, const T*)>& dot, const std::vector<T>& b, std::vector<T>& x,
             double rtol, int max_iter) {
  const std::size_t n = b.size();
  CgResult res;
  const double bnorm = std::sqrt(std::abs(dot(b.data(), b.data())));
  if (bnorm == 0) {
    std::fill(x.begin(), x.end(), T(0));
    res.converged = true;
    return res;
  }
  if (x.size() != n) x.assign(n, T(0));
  std::vector<T> r(n), z(n), p(n), Ap(n);
  A(x.data(), Ap.data());
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
  Minv(r.data(), z.data());
  p = z;
  cplx rz = dot(r.data(), z.data());
  for (int it = 0; it <= max_iter; ++it) {
    double rn = std::sqrt(std::abs(dot(r.data(), r.data())));
    res.relative_residual = rn / bnorm;
    res.iterations = it;
    if (res.relative_residual <= rtol) {
      res.converged = true;
      return res;
    }
    if (it == max_iter) break;
    A(p.data(), Ap.data());
    cplx pAp = dot(p.data(), Ap.data());
    if (std::abs(pAp) == 0) break;
    T alpha;
    if constexpr (std::is_same_v<T, cplx>)
      alpha = rz / pAp;
    else
      alpha = rz.real() / pAp.real();
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    Minv(r.data(), z.data());
    cplx rz_new = dot(r.data(), z.data());
    T beta;
    if constexpr (std::is_same_v<T, cplx>)
      beta = rz_new / rz;
    else
      beta = rz_new.real() / rz.real();
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return res;
}

}  // namespace hom
