#include "tfuse/init.hpp"

#include <cmath>
#include <stdexcept>

namespace tfuse {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  if (fan_in == 0) throw std::invalid_argument("kaiming_uniform: zero fan-in");
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::size_t conv_fan_in(const Shape& kernel_shape) {
  if (kernel_shape.size() != 4) throw ShapeError("conv_fan_in: expected rank-4 kernel shape");
  return kernel_shape[1] * kernel_shape[2] * kernel_shape[3];
}

}  // namespace tfuse
