#include "tfuse/ffm.hpp"

#include <algorithm>
#include <stdexcept>

#include "tfuse/init.hpp"
#include "tfuse/ops.hpp"

namespace tfuse {

using detail::make_result;
using detail::Node;

void FeaturePair::validate() const {
  if (!rgb.defined() || !thermal.defined()) throw ShapeError("FeaturePair: undefined branch");
  if (rgb.rank() != 4 || rgb.shape() != thermal.shape()) {
    throw ShapeError("FeaturePair: branches must be identical rank-4 shapes, got " + shape_to_string(rgb.shape()) +
                     " and " + shape_to_string(thermal.shape()));
  }
}

std::string to_string(FfmVariant v) {
  switch (v) {
    case FfmVariant::adaptive_rp_globalcc:
      return "adaptive_rp_globalcc";
    case FfmVariant::fixed_rp:
      return "fixed_rp";
    case FfmVariant::adaptive_rp_convcc:
      return "adaptive_rp_convcc";
  }
  return "adaptive_rp_globalcc";
}

FfmVariant ffm_variant_from_string(const std::string& s) {
  if (s == "adaptive_rp_globalcc") return FfmVariant::adaptive_rp_globalcc;
  if (s == "fixed_rp") return FfmVariant::fixed_rp;
  if (s == "adaptive_rp_convcc") return FfmVariant::adaptive_rp_convcc;
  throw std::invalid_argument("unknown ffm variant: " + s);
}

bool is_adaptive(FfmVariant v) { return v != FfmVariant::fixed_rp; }
// fixed_rp keeps GlobalCC as its Step II; only the Step I sampling differs.
bool uses_global_cc(FfmVariant v) { return v != FfmVariant::adaptive_rp_convcc; }

FfmParams FfmParams::init(const FfmOptions& options, Rng& rng) {
  const std::size_t c = options.channels;
  const std::size_t k = options.deform_kernel;
  if (c == 0 || k % 2 == 0) throw std::invalid_argument("ffm: channels must be positive and kernel odd");
  if (options.reduction == 0 || c % options.reduction != 0) {
    throw std::invalid_argument("ffm: GlobalCC reduction " + std::to_string(options.reduction) +
                                " must divide channels " + std::to_string(c));
  }
  FfmParams p;
  p.options = options;
  if (is_adaptive(options.variant)) {
    p.offset_kernel = Tensor::zeros({2 * k * k, 2 * c, 3, 3}, true);
    p.offset_bias = Tensor::zeros({2 * k * k}, true);
  }
  p.gw_kernel = kaiming_uniform({c, 2, k, k}, 2 * k * k, rng, 1.0);
  p.gw_bias = Tensor::zeros({c}, true);
  if (options.variant == FfmVariant::fixed_rp) {
    p.mix_kernel = kaiming_uniform({c, c, 1, 1}, c, rng, 1.0);
    p.mix_bias = Tensor::zeros({c}, true);
  }
  if (uses_global_cc(options.variant)) {
    const std::size_t mid = c / options.reduction;
    p.gcc_fc1_kernel = kaiming_uniform({mid, c, 1, 1}, c, rng);
    p.gcc_fc1_bias = Tensor::zeros({mid}, true);
    p.gcc_fc2_kernel = kaiming_uniform({c, mid, 1, 1}, mid, rng, 1.0);
    p.gcc_fc2_bias = Tensor::zeros({c}, true);
  } else {
    p.convcc_kernel = kaiming_uniform({c, c, 1, 1}, c, rng, 1.0);
    p.convcc_bias = Tensor::zeros({c}, true);
  }
  p.validate();
  return p;
}

void FfmParams::validate() const {
  const std::size_t c = options.channels;
  const std::size_t k = options.deform_kernel;
  auto expect = [](const Tensor& t, const Shape& shape, const char* name) {
    if (!t.defined()) throw std::invalid_argument(std::string("ffm: missing parameter ") + name);
    if (t.shape() != shape) {
      throw ShapeError(std::string("ffm: ") + name + " expected " + shape_to_string(shape) + ", got " +
                       shape_to_string(t.shape()));
    }
  };
  auto forbid = [&](const Tensor& t, const char* name) {
    if (t.defined()) {
      throw std::invalid_argument(std::string("ffm: parameter ") + name + " not used by variant " +
                                  to_string(options.variant));
    }
  };
  if (options.reduction == 0 || c % options.reduction != 0) {
    throw std::invalid_argument("ffm: reduction must divide channels");
  }
  if (is_adaptive(options.variant)) {
    expect(offset_kernel, {2 * k * k, 2 * c, 3, 3}, "offset_kernel");
    expect(offset_bias, {2 * k * k}, "offset_bias");
    forbid(mix_kernel, "mix_kernel");
  } else {
    forbid(offset_kernel, "offset_kernel");
    forbid(offset_bias, "offset_bias");
    expect(mix_kernel, {c, c, 1, 1}, "mix_kernel");
    expect(mix_bias, {c}, "mix_bias");
  }
  expect(gw_kernel, {c, 2, k, k}, "gw_kernel");
  expect(gw_bias, {c}, "gw_bias");
  if (uses_global_cc(options.variant)) {
    const std::size_t mid = c / options.reduction;
    expect(gcc_fc1_kernel, {mid, c, 1, 1}, "gcc_fc1_kernel");
    expect(gcc_fc1_bias, {mid}, "gcc_fc1_bias");
    expect(gcc_fc2_kernel, {c, mid, 1, 1}, "gcc_fc2_kernel");
    expect(gcc_fc2_bias, {c}, "gcc_fc2_bias");
    forbid(convcc_kernel, "convcc_kernel");
  } else {
    expect(convcc_kernel, {c, c, 1, 1}, "convcc_kernel");
    expect(convcc_bias, {c}, "convcc_bias");
    forbid(gcc_fc1_kernel, "gcc_fc1_kernel");
  }
}

ParameterSet FfmParams::parameters(const std::string& prefix) const {
  ParameterSet set;
  auto put = [&](const char* name, const Tensor& t) {
    if (t.defined()) set.add(prefix + name, t);
  };
  put("offset_kernel", offset_kernel);
  put("offset_bias", offset_bias);
  put("gw_kernel", gw_kernel);
  put("gw_bias", gw_bias);
  put("mix_kernel", mix_kernel);
  put("mix_bias", mix_bias);
  put("gcc_fc1_kernel", gcc_fc1_kernel);
  put("gcc_fc1_bias", gcc_fc1_bias);
  put("gcc_fc2_kernel", gcc_fc2_kernel);
  put("gcc_fc2_bias", gcc_fc2_bias);
  put("convcc_kernel", convcc_kernel);
  put("convcc_bias", convcc_bias);
  return set;
}

FfmParams FfmParams::frozen() const {
  FfmParams p = *this;
  for (Tensor* t : {&p.offset_kernel, &p.offset_bias, &p.gw_kernel, &p.gw_bias, &p.mix_kernel, &p.mix_bias,
                    &p.gcc_fc1_kernel, &p.gcc_fc1_bias, &p.gcc_fc2_kernel, &p.gcc_fc2_bias, &p.convcc_kernel,
                    &p.convcc_bias}) {
    *t = t->detach();
  }
  return p;
}

Tensor predict_offsets(const FeaturePair& pair, const FfmParams& params) {
  if (!is_adaptive(params.options.variant)) {
    throw std::logic_error("predict_offsets: variant " + to_string(params.options.variant) + " has no offset branch");
  }
  pair.validate();
  return conv2d(concat_channels(pair.rgb, pair.thermal), params.offset_kernel, params.offset_bias, 1, 1);
}

Tensor riffle_shuffle(const FeaturePair& pair) {
  pair.validate();
  const std::size_t b = pair.rgb.dim(0), c = pair.rgb.dim(1), hw = pair.rgb.dim(2) * pair.rgb.dim(3);
  auto rv = pair.rgb.data();
  auto tv = pair.thermal.data();
  std::vector<double> out(2 * b * c * hw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < c; ++i) {
      std::copy_n(rv.begin() + (n * c + i) * hw, hw, out.begin() + (n * 2 * c + 2 * i) * hw);
      std::copy_n(tv.begin() + (n * c + i) * hw, hw, out.begin() + (n * 2 * c + 2 * i + 1) * hw);
    }
  }
  return make_result({b, 2 * c, pair.rgb.dim(2), pair.rgb.dim(3)}, std::move(out), {pair.rgb, pair.thermal},
                     [b, c, hw](Node& self) {
                       for (std::size_t m = 0; m < 2; ++m) {
                         Node& p = *self.parents[m];
                         if (!p.requires_grad) continue;
                         auto g = p.grad_buffer();
                         for (std::size_t n = 0; n < b; ++n) {
                           for (std::size_t i = 0; i < c; ++i) {
                             const double* src = self.grad.data() + (n * 2 * c + 2 * i + m) * hw;
                             double* dst = g.data() + (n * c + i) * hw;
                             for (std::size_t q = 0; q < hw; ++q) dst[q] += src[q];
                           }
                         }
                       }
                     });
}

Tensor tap_coords(const Tensor& offsets, std::size_t tap, std::size_t kernel) {
  if (offsets.rank() != 4 || offsets.dim(1) != 2 * kernel * kernel || tap >= kernel * kernel) {
    throw ShapeError("tap_coords: offsets must be [b, 2*k*k, h, w], got " + shape_to_string(offsets.shape()));
  }
  const std::size_t b = offsets.dim(0), h = offsets.dim(2), w = offsets.dim(3), hw = h * w;
  const std::size_t channels = offsets.dim(1);
  const double dy = static_cast<double>(tap / kernel) - static_cast<double>(kernel / 2);
  const double dx = static_cast<double>(tap % kernel) - static_cast<double>(kernel / 2);
  auto ov = offsets.data();
  std::vector<double> out(b * 2 * hw);
  for (std::size_t n = 0; n < b; ++n) {
    const double* oy = ov.data() + (n * channels + 2 * tap) * hw;
    const double* ox = oy + hw;
    double* cy = out.data() + n * 2 * hw;
    double* cx = cy + hw;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        cy[y * w + x] = static_cast<double>(y) + dy + oy[y * w + x];
        cx[y * w + x] = static_cast<double>(x) + dx + ox[y * w + x];
      }
    }
  }
  return make_result({b, 2, h, w}, std::move(out), {offsets}, [b, channels, hw, tap](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t q = 0; q < 2 * hw; ++q) g[(n * channels + 2 * tap) * hw + q] += self.grad[n * 2 * hw + q];
    }
  });
}

Tensor kernel_tap(const Tensor& kernel, std::size_t ky, std::size_t kx) {
  if (kernel.rank() != 4 || ky >= kernel.dim(2) || kx >= kernel.dim(3)) {
    throw ShapeError("kernel_tap: tap outside kernel " + shape_to_string(kernel.shape()));
  }
  const std::size_t planes = kernel.dim(0) * kernel.dim(1), k = kernel.dim(2);
  auto kv = kernel.data();
  std::vector<double> out(planes);
  for (std::size_t p = 0; p < planes; ++p) out[p] = kv[p * k * k + ky * k + kx];
  return make_result({kernel.dim(0), kernel.dim(1), 1, 1}, std::move(out), {kernel}, [planes, k, ky, kx](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) g[p * k * k + ky * k + kx] += self.grad[p];
  });
}

Tensor deformable_fuse(const FeaturePair& pair, const Tensor& offsets, const Tensor& gw_kernel,
                       const Tensor& gw_bias) {
  pair.validate();
  const std::size_t c = pair.channels();
  if (gw_kernel.rank() != 4 || gw_kernel.dim(0) != c || gw_kernel.dim(1) != 2) {
    throw ShapeError("deformable_fuse: gw_kernel must be [c, 2, k, k], got " + shape_to_string(gw_kernel.shape()));
  }
  const std::size_t k = gw_kernel.dim(2);
  if (offsets.rank() != 4 || offsets.dim(0) != pair.batch() || offsets.dim(1) != 2 * k * k ||
      offsets.dim(2) != pair.rgb.dim(2) || offsets.dim(3) != pair.rgb.dim(3)) {
    throw ShapeError("deformable_fuse: offsets must be [b, 2*k*k, h, w], got " + shape_to_string(offsets.shape()));
  }
  const Tensor shuffled = riffle_shuffle(pair);
  std::vector<Tensor> taps;
  taps.reserve(k * k);
  for (std::size_t t = 0; t < k * k; ++t) {
    const Tensor sampled = bilinear_sample(shuffled, tap_coords(offsets, t, k));
    // The bias rides on the first tap.
    taps.push_back(grouped_conv2d(sampled, kernel_tap(gw_kernel, t / k, t % k), t == 0 ? gw_bias : Tensor{}, c));
  }
  return add_n(taps);
}

Tensor deformable_fuse(const FeaturePair& pair, const FfmParams& params) {
  return deformable_fuse(pair, predict_offsets(pair, params), params.gw_kernel, params.gw_bias);
}

Tensor fixed_fuse(const FeaturePair& pair, const FfmParams& params) {
  if (params.options.variant != FfmVariant::fixed_rp) throw std::logic_error("fixed_fuse: variant is not fixed_rp");
  const std::size_t c = params.options.channels;
  const std::size_t pad = params.options.deform_kernel / 2;
  Tensor grouped = grouped_conv2d(riffle_shuffle(pair), params.gw_kernel, params.gw_bias, c, 1, pad);
  return conv2d(grouped, params.mix_kernel, params.mix_bias, 1, 0);
}

Tensor global_cc_gates(const Tensor& step1, const FfmParams& params) {
  if (!uses_global_cc(params.options.variant)) throw std::logic_error("global_cc: variant uses ConvCC");
  Tensor squeezed = global_avg_pool(step1);
  Tensor hidden = relu(conv2d(squeezed, params.gcc_fc1_kernel, params.gcc_fc1_bias));
  return sigmoid(conv2d(hidden, params.gcc_fc2_kernel, params.gcc_fc2_bias));
}

Tensor global_cc(const Tensor& step1, const FfmParams& params) {
  return scale_channels(step1, global_cc_gates(step1, params));
}

Tensor conv_cc(const Tensor& step1, const FfmParams& params) {
  if (params.options.variant != FfmVariant::adaptive_rp_convcc) throw std::logic_error("conv_cc: wrong variant");
  return conv2d(step1, params.convcc_kernel, params.convcc_bias);
}

FfmOutput ffm_forward(const FeaturePair& pair, const FfmParams& params) {
  params.validate();
  pair.validate();
  if (pair.channels() != params.options.channels) {
    throw ShapeError("ffm_forward: pair has " + std::to_string(pair.channels()) + " channels, module expects " +
                     std::to_string(params.options.channels));
  }
  FfmOutput out;
  Tensor step1;
  if (is_adaptive(params.options.variant)) {
    out.offsets = predict_offsets(pair, params);
    step1 = deformable_fuse(pair, out.offsets, params.gw_kernel, params.gw_bias);
  } else {
    step1 = fixed_fuse(pair, params);
  }
  out.fused = uses_global_cc(params.options.variant) ? global_cc(step1, params) : conv_cc(step1, params);
  return out;
}

}  // namespace tfuse
