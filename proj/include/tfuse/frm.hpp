#pragma once

#include <cstddef>
#include <string>

#include "tfuse/rng.hpp"
#include "tfuse/tensor.hpp"

// Feature refinement module: a segmentation branch predicts a box-level
// mask from the fused feature, the per-channel cosine similarity between
// that mask and every channel is projected to gates, and the gates rescale
// the fused feature channel-wise.

namespace tfuse {

struct FrmParams {
  std::size_t channels = 0;
  // Segmentation branch: 3x3 c -> c/2, rectifier, 1x1 c/2 -> 1.
  Tensor seg_conv1_kernel, seg_conv1_bias, seg_conv2_kernel, seg_conv2_bias;
  // Projection: 1x1 c -> c, rectifier, 1x1 c -> c on the [b,c,1,1] correlation.
  Tensor proj_fc1_kernel, proj_fc1_bias, proj_fc2_kernel, proj_fc2_bias;

  static FrmParams init(std::size_t channels, Rng& rng);
  /// All-zero weights and biases (mask 0.5, gates 0.5).
  static FrmParams zeros(std::size_t channels);
  void validate() const;
  ParameterSet segmentation_parameters(const std::string& prefix = "frm.") const;
  ParameterSet projection_parameters(const std::string& prefix = "frm.") const;
  ParameterSet parameters(const std::string& prefix = "frm.") const;
  FrmParams frozen() const;
};

/// m = sigmoid(H(F_x)), shape [b, h, w].
Tensor predict_mask(const Tensor& fused, const FrmParams& params);

/// v[b,i] = <m_hat, f_hat_i> with both flattened maps L2-normalized.
/// A zero-norm operand yields v = 0 and passes no gradient.
Tensor channel_correlation(const Tensor& mask, const Tensor& fused);

/// s = sigmoid(P(v)), shape [b, c].
Tensor project_correlation(const Tensor& correlation, const FrmParams& params);

/// F_y[b,i] = s[b,i] * F_x[b,i].
Tensor refine(const Tensor& fused, const Tensor& gates);

struct FrmOutput {
  Tensor refined;      // F_y [b,c,h,w]
  Tensor mask;         // m [b,h,w]
  Tensor correlation;  // v [b,c]
  Tensor gates;        // s [b,c]
};

FrmOutput frm_forward(const Tensor& fused, const FrmParams& params);

}  // namespace tfuse
