#pragma once

#include <cstddef>
#include <span>

// Raw-buffer compute kernels behind the differentiable ops.
//
// Every kernel exists twice: `serial::` is the single-threaded reference
// kept for testing and benchmarking, `omp::` splits the outermost
// independent loop across OpenMP threads. Both variants walk each inner
// reduction in the same order, so their results are bitwise identical and
// independent of the thread count.

namespace tfuse::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  std::size_t out_height() const { return (in_height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (in_width + 2 * padding - kernel) / stride + 1; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
};

struct SampleGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;
  std::size_t out_height = 1;
  std::size_t out_width = 1;
};

#define TFUSE_DECLARE_KERNELS                                                                      \
  /* out[b,co,oy,ox] = bias[co] + sum over the group's input channels and taps. */                 \
  void conv_forward(const ConvGeometry& g, std::span<const double> input,                          \
                    std::span<const double> kernel, std::span<const double> bias,                  \
                    std::span<double> out);                                                        \
  /* grad_input += d(out)/d(input)^T grad_out */                                                   \
  void conv_backward_input(const ConvGeometry& g, std::span<const double> grad_out,                \
                           std::span<const double> kernel, std::span<double> grad_input);          \
  /* grad_kernel += ..., grad_bias += ... (grad_bias may be empty) */                              \
  void conv_backward_params(const ConvGeometry& g, std::span<const double> grad_out,               \
                            std::span<const double> input, std::span<double> grad_kernel,          \
                            std::span<double> grad_bias);                                          \
  /* coords is [b,2,oh,ow] holding (y, x); zero padding outside the map. */                        \
  void bilinear_forward(const SampleGeometry& g, std::span<const double> input,                    \
                        std::span<const double> coords, std::span<double> out);                    \
  void bilinear_backward_input(const SampleGeometry& g, std::span<const double> grad_out,          \
                               std::span<const double> coords, std::span<double> grad_input);      \
  void bilinear_backward_coords(const SampleGeometry& g, std::span<const double> grad_out,         \
                                std::span<const double> input, std::span<const double> coords,     \
                                std::span<double> grad_coords);

namespace serial {
TFUSE_DECLARE_KERNELS
}  // namespace serial

namespace omp {
TFUSE_DECLARE_KERNELS
}  // namespace omp

#undef TFUSE_DECLARE_KERNELS

/// Threads the OpenMP variants will use (1 when built without OpenMP).
int max_threads();

}  // namespace tfuse::kernels
