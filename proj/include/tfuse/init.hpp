#pragma once

#include <cstddef>

#include "tfuse/rng.hpp"
#include "tfuse/tensor.hpp"

namespace tfuse {

/// U(-b, b) with b = gain * sqrt(3 / fan_in); gain sqrt(2) suits rectifiers.
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.4142135623730951);

/// Fan-in of a [c_out, c_in_per_group, k, k] kernel.
std::size_t conv_fan_in(const Shape& kernel_shape);

}  // namespace tfuse
