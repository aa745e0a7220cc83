#include "homlab/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace hom {
namespace {

struct PlanPair {
  fftw_plan fwd;
  fftw_plan bwd;
};

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

PlanPair get_plans(const Grid& g, std::size_t howmany) {
  using Key = std::tuple<int, int, int, int, std::size_t>;
  static std::map<Key, PlanPair> cache;
  Key key{g.dim(), g.side(0), g.side(1), g.side(2), howmany};
  std::lock_guard<std::mutex> lock(plan_mutex());
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  int n[3] = {g.side(0), g.side(1), g.side(2)};
  int dist = static_cast<int>(g.size());
  fftw_complex* buf = fftw_alloc_complex(g.size() * howmany);
  unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair p;
  p.fwd = fftw_plan_many_dft(g.dim(), n, static_cast<int>(howmany), buf, nullptr, 1, dist, buf, nullptr,
                             1, dist, FFTW_FORWARD, flags);
  p.bwd = fftw_plan_many_dft(g.dim(), n, static_cast<int>(howmany), buf, nullptr, 1, dist, buf, nullptr,
                             1, dist, FFTW_BACKWARD, flags);
  fftw_free(buf);
  if (!p.fwd || !p.bwd) throw NumericalError("FFT planning failed");
  cache.emplace(key, p);
  return p;
}

}  // namespace

Fft::Fft(const Grid& g, std::size_t howmany) : n_(g.size()), howmany_(howmany) {
  PlanPair p = get_plans(g, howmany);
  fwd_ = p.fwd;
  bwd_ = p.bwd;
}

void Fft::forward(cplx* data) const {
  auto* d = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(fwd_), d, d);
}

void Fft::inverse(cplx* data) const {
  auto* d = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(bwd_), d, d);
  const double s = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_ * howmany_; ++i) data[i] *= s;
}

}  // namespace hom
