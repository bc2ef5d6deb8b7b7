#include "tfuse/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tfuse::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

#ifdef _OPENMP
#define TFUSE_PARALLEL_FOR _Pragma("omp parallel for schedule(static)")
#else
#define TFUSE_PARALLEL_FOR
#endif
#include "kernels_impl.inc"
#undef TFUSE_PARALLEL_FOR

}  // namespace omp
}  // namespace tfuse::kernels
