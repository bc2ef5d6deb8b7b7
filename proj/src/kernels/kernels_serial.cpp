#include "tfuse/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace tfuse::kernels::serial {

#define TFUSE_PARALLEL_FOR
#include "kernels_impl.inc"
#undef TFUSE_PARALLEL_FOR

}  // namespace tfuse::kernels::serial
