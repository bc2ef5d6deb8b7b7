#pragma once

#include <cstddef>

#include "tfuse/tensor.hpp"

// Differentiable tensor operations. Each op validates shapes, computes the
// forward value eagerly and, when any input requires a gradient, records a
// backward closure on the tape.

namespace tfuse {

/// Cross-correlation, no kernel flip. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

/// Group i of the output channels reads only input channels
/// [i*c_in/groups, (i+1)*c_in/groups).
Tensor grouped_conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t groups,
                      std::size_t stride = 1, std::size_t padding = 0);

/// Samples input[b,c,h,w] at coords[b,2,h',w'] holding (y, x) in pixel units.
/// Neighbors outside the map contribute zero.
Tensor bilinear_sample(const Tensor& input, const Tensor& coords);

/// [b,c,h,w] -> [b,c,1,1] spatial mean.
Tensor global_avg_pool(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
/// Rejects non-positive entries; clamp first.
Tensor log(const Tensor& a);
/// Values outside [lo, hi] are pinned and pass no gradient.
Tensor clamp(const Tensor& a, double lo, double hi);

/// x[b,c,h,w] * s[b,c,1,1] broadcast over the spatial extent.
Tensor scale_channels(const Tensor& x, const Tensor& s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum of a list of same-shape tensors, accumulated left to right.
Tensor add_n(const std::vector<Tensor>& terms);

Tensor reshape(const Tensor& a, Shape shape);
/// Concatenates along axis 1 (channels) of two rank-4 tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [start, start+count) of a rank-4 tensor.
Tensor slice_channels(const Tensor& a, std::size_t start, std::size_t count);
/// Batch items [start, start+count) of a tensor of any rank >= 1.
Tensor slice_batch(const Tensor& a, std::size_t start, std::size_t count);

}  // namespace tfuse
