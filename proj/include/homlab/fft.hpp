#pragma once

#include <cstddef>

#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace hom {

// Batched in-place complex DFT over `howmany` contiguous grid-shaped blocks.
// Plans are cached process-wide; execution is thread-safe.
class Fft {
 public:
  Fft(const Grid& g, std::size_t howmany = 1);
  void forward(cplx* data) const;
  void inverse(cplx* data) const;  // includes the 1/N factor
  std::size_t howmany() const { return howmany_; }

 private:
  void* fwd_;
  void* bwd_;
  std::size_t n_;
  std::size_t howmany_;
};

}  // namespace hom
