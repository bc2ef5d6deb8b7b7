#pragma once

#include <cstddef>
#include <string>

#include "tfuse/rng.hpp"
#include "tfuse/tensor.hpp"

// Feature fusion module.
//
// Step I (parallel-channel fusion) pairs RGB channel i with thermal channel
// i by riffle shuffling the two stacks and reduces every pair to one output
// channel with a group-wise convolution (groups = c). In the adaptive
// variants the group-wise convolution is deformable: a 3x3 convolution over
// the concatenated pair predicts one (dy, dx) per kernel tap and location,
// shared by both modalities, and each tap bilinearly samples the shuffled
// stack at the displaced position.
//
// Step II (cross-channel fusion) recalibrates Step I with global channel
// gates (squeeze -> bottleneck -> rectifier -> expand -> sigmoid), or with
// a plain 1x1 convolution in the ConvCC ablation.

namespace tfuse {

struct FeaturePair {
  Tensor rgb;
  Tensor thermal;

  /// Throws unless both are rank-4 with identical shapes.
  void validate() const;
  std::size_t batch() const { return rgb.dim(0); }
  std::size_t channels() const { return rgb.dim(1); }
};

enum class FfmVariant { adaptive_rp_globalcc, fixed_rp, adaptive_rp_convcc };

std::string to_string(FfmVariant v);
FfmVariant ffm_variant_from_string(const std::string& s);
bool is_adaptive(FfmVariant v);
bool uses_global_cc(FfmVariant v);

struct FfmOptions {
  std::size_t channels = 16;
  FfmVariant variant = FfmVariant::adaptive_rp_globalcc;
  std::size_t deform_kernel = 3;
  std::size_t reduction = 4;  // GlobalCC bottleneck ratio
};

/// Parameters present depend on the variant; absent ones stay undefined.
struct FfmParams {
  FfmOptions options;
  // Offset branch: [2*k*k, 2c, 3, 3] over concat(rgb, thermal), zero-initialized.
  Tensor offset_kernel, offset_bias;
  // Group-wise fusion: [c, 2, k, k], group i reads (rgb_i, thermal_i).
  Tensor gw_kernel, gw_bias;
  // fixed_rp second stage: dense 1x1 [c, c, 1, 1].
  Tensor mix_kernel, mix_bias;
  // GlobalCC: [c/r, c, 1, 1] then [c, c/r, 1, 1].
  Tensor gcc_fc1_kernel, gcc_fc1_bias, gcc_fc2_kernel, gcc_fc2_bias;
  // ConvCC: dense 1x1 [c, c, 1, 1].
  Tensor convcc_kernel, convcc_bias;

  static FfmParams init(const FfmOptions& options, Rng& rng);
  /// Throws when the defined tensors do not match the variant.
  void validate() const;
  ParameterSet parameters(const std::string& prefix = "ffm.") const;
  /// Copy with all tensors detached (immutable snapshot for inference).
  FfmParams frozen() const;
};

/// [b, 2*k*k, h, w]: channel 2t holds dy and 2t+1 holds dx of tap t
/// (taps in row-major kernel order).
Tensor predict_offsets(const FeaturePair& pair, const FfmParams& params);

/// Output channel 2i is rgb channel i, 2i+1 is thermal channel i.
Tensor riffle_shuffle(const FeaturePair& pair);

/// Sampling positions of one tap: base grid + tap displacement + offsets.
/// Returns [b, 2, h, w] (y, x) coordinates.
Tensor tap_coords(const Tensor& offsets, std::size_t tap, std::size_t kernel);

/// [c_out, c_in, k, k] -> [c_out, c_in, 1, 1] at tap (ky, kx).
Tensor kernel_tap(const Tensor& kernel, std::size_t ky, std::size_t kx);

/// Deformable group-wise fusion with explicit offsets.
Tensor deformable_fuse(const FeaturePair& pair, const Tensor& offsets, const Tensor& gw_kernel, const Tensor& gw_bias);
/// Step I of the adaptive variants (offsets predicted from the pair).
Tensor deformable_fuse(const FeaturePair& pair, const FfmParams& params);
/// Step I of fixed_rp: grouped k x k conv then dense 1x1 conv, no offsets.
Tensor fixed_fuse(const FeaturePair& pair, const FfmParams& params);

/// Per-(batch, channel) gates in (0,1), shape [b, c, 1, 1].
Tensor global_cc_gates(const Tensor& step1, const FfmParams& params);
Tensor global_cc(const Tensor& step1, const FfmParams& params);
Tensor conv_cc(const Tensor& step1, const FfmParams& params);

struct FfmOutput {
  Tensor fused;    // F_x, [b, c, h, w]
  Tensor offsets;  // undefined for fixed_rp
};

FfmOutput ffm_forward(const FeaturePair& pair, const FfmParams& params);

}  // namespace tfuse
