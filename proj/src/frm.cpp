#include "tfuse/frm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tfuse/init.hpp"
#include "tfuse/ops.hpp"

namespace tfuse {

using detail::make_result;
using detail::Node;

namespace {
constexpr double kZeroNorm = 1e-12;
}

FrmParams FrmParams::init(std::size_t channels, Rng& rng) {
  if (channels < 2 || channels % 2 != 0) throw std::invalid_argument("frm: channel count must be even and >= 2");
  const std::size_t c = channels, half = c / 2;
  FrmParams p;
  p.channels = c;
  p.seg_conv1_kernel = kaiming_uniform({half, c, 3, 3}, c * 9, rng);
  p.seg_conv1_bias = Tensor::zeros({half}, true);
  p.seg_conv2_kernel = kaiming_uniform({1, half, 1, 1}, half, rng, 1.0);
  p.seg_conv2_bias = Tensor::zeros({1}, true);
  p.proj_fc1_kernel = kaiming_uniform({c, c, 1, 1}, c, rng);
  p.proj_fc1_bias = Tensor::zeros({c}, true);
  p.proj_fc2_kernel = kaiming_uniform({c, c, 1, 1}, c, rng, 1.0);
  p.proj_fc2_bias = Tensor::zeros({c}, true);
  return p;
}

FrmParams FrmParams::zeros(std::size_t channels) {
  if (channels < 2 || channels % 2 != 0) throw std::invalid_argument("frm: channel count must be even and >= 2");
  const std::size_t c = channels, half = c / 2;
  FrmParams p;
  p.channels = c;
  p.seg_conv1_kernel = Tensor::zeros({half, c, 3, 3}, true);
  p.seg_conv1_bias = Tensor::zeros({half}, true);
  p.seg_conv2_kernel = Tensor::zeros({1, half, 1, 1}, true);
  p.seg_conv2_bias = Tensor::zeros({1}, true);
  p.proj_fc1_kernel = Tensor::zeros({c, c, 1, 1}, true);
  p.proj_fc1_bias = Tensor::zeros({c}, true);
  p.proj_fc2_kernel = Tensor::zeros({c, c, 1, 1}, true);
  p.proj_fc2_bias = Tensor::zeros({c}, true);
  return p;
}

void FrmParams::validate() const {
  const std::size_t c = channels, half = c / 2;
  auto expect = [](const Tensor& t, const Shape& shape, const char* name) {
    if (!t.defined() || t.shape() != shape) {
      throw ShapeError(std::string("frm: parameter ") + name + " expected " + shape_to_string(shape));
    }
  };
  expect(seg_conv1_kernel, {half, c, 3, 3}, "seg_conv1_kernel");
  expect(seg_conv1_bias, {half}, "seg_conv1_bias");
  expect(seg_conv2_kernel, {1, half, 1, 1}, "seg_conv2_kernel");
  expect(seg_conv2_bias, {1}, "seg_conv2_bias");
  expect(proj_fc1_kernel, {c, c, 1, 1}, "proj_fc1_kernel");
  expect(proj_fc1_bias, {c}, "proj_fc1_bias");
  expect(proj_fc2_kernel, {c, c, 1, 1}, "proj_fc2_kernel");
  expect(proj_fc2_bias, {c}, "proj_fc2_bias");
}

ParameterSet FrmParams::segmentation_parameters(const std::string& prefix) const {
  ParameterSet set;
  set.add(prefix + "seg_conv1_kernel", seg_conv1_kernel);
  set.add(prefix + "seg_conv1_bias", seg_conv1_bias);
  set.add(prefix + "seg_conv2_kernel", seg_conv2_kernel);
  set.add(prefix + "seg_conv2_bias", seg_conv2_bias);
  return set;
}

ParameterSet FrmParams::projection_parameters(const std::string& prefix) const {
  ParameterSet set;
  set.add(prefix + "proj_fc1_kernel", proj_fc1_kernel);
  set.add(prefix + "proj_fc1_bias", proj_fc1_bias);
  set.add(prefix + "proj_fc2_kernel", proj_fc2_kernel);
  set.add(prefix + "proj_fc2_bias", proj_fc2_bias);
  return set;
}

ParameterSet FrmParams::parameters(const std::string& prefix) const {
  ParameterSet set = segmentation_parameters(prefix);
  set.append(projection_parameters(prefix));
  return set;
}

FrmParams FrmParams::frozen() const {
  FrmParams p = *this;
  for (Tensor* t : {&p.seg_conv1_kernel, &p.seg_conv1_bias, &p.seg_conv2_kernel, &p.seg_conv2_bias,
                    &p.proj_fc1_kernel, &p.proj_fc1_bias, &p.proj_fc2_kernel, &p.proj_fc2_bias}) {
    *t = t->detach();
  }
  return p;
}

Tensor predict_mask(const Tensor& fused, const FrmParams& params) {
  if (fused.rank() != 4 || fused.dim(1) != params.channels) {
    throw ShapeError("predict_mask: expected [b," + std::to_string(params.channels) + ",h,w], got " +
                     shape_to_string(fused.shape()));
  }
  Tensor hidden = relu(conv2d(fused, params.seg_conv1_kernel, params.seg_conv1_bias, 1, 1));
  Tensor logits = conv2d(hidden, params.seg_conv2_kernel, params.seg_conv2_bias);
  return reshape(sigmoid(logits), {fused.dim(0), fused.dim(2), fused.dim(3)});
}

Tensor channel_correlation(const Tensor& mask, const Tensor& fused) {
  if (fused.rank() != 4 || mask.rank() != 3 || mask.dim(0) != fused.dim(0) || mask.dim(1) != fused.dim(2) ||
      mask.dim(2) != fused.dim(3)) {
    throw ShapeError("channel_correlation: mask " + shape_to_string(mask.shape()) + " not aligned with feature " +
                     shape_to_string(fused.shape()));
  }
  const std::size_t b = fused.dim(0), c = fused.dim(1), hw = fused.dim(2) * fused.dim(3);
  auto mv = mask.data();
  auto fv = fused.data();
  std::vector<double> v(b * c, 0.0);
  std::vector<double> mask_norm(b, 0.0), feat_norm(b * c, 0.0), dots(b * c, 0.0);
  for (std::size_t n = 0; n < b; ++n) {
    const double* m = mv.data() + n * hw;
    double mm = 0.0;
    for (std::size_t p = 0; p < hw; ++p) mm += m[p] * m[p];
    mask_norm[n] = std::sqrt(mm);
    for (std::size_t i = 0; i < c; ++i) {
      const double* f = fv.data() + (n * c + i) * hw;
      double ff = 0.0, mf = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        ff += f[p] * f[p];
        mf += m[p] * f[p];
      }
      feat_norm[n * c + i] = std::sqrt(ff);
      dots[n * c + i] = mf;
      const double denom = mask_norm[n] * feat_norm[n * c + i];
      if (mask_norm[n] > kZeroNorm && feat_norm[n * c + i] > kZeroNorm) {
        v[n * c + i] = std::clamp(mf / denom, -1.0, 1.0);
      }
    }
  }
  return make_result({b, c}, v, {mask, fused}, [b, c, hw, mask_norm, feat_norm, dots](Node& self) {
    Node& pm = *self.parents[0];
    Node& pf = *self.parents[1];
    if (pm.requires_grad) pm.grad_buffer();
    if (pf.requires_grad) pf.grad_buffer();
    // d v / d m = f/(|m||f|) - v m/|m|^2 ;  d v / d f = m/(|m||f|) - v f/|f|^2
    for (std::size_t n = 0; n < b; ++n) {
      const double mn = mask_norm[n];
      if (mn <= kZeroNorm) continue;
      const double* m = pm.value.data() + n * hw;
      for (std::size_t i = 0; i < c; ++i) {
        const double fnorm = feat_norm[n * c + i];
        if (fnorm <= kZeroNorm) continue;
        const double gv = self.grad[n * c + i];
        if (gv == 0.0) continue;
        const double* f = pf.value.data() + (n * c + i) * hw;
        const double inv = 1.0 / (mn * fnorm);
        const double cosv = dots[n * c + i] * inv;
        if (pm.requires_grad) {
          double* gm = pm.grad_buffer().data() + n * hw;
          const double km = cosv / (mn * mn);
          for (std::size_t p = 0; p < hw; ++p) gm[p] += gv * (f[p] * inv - km * m[p]);
        }
        if (pf.requires_grad) {
          double* gf = pf.grad_buffer().data() + (n * c + i) * hw;
          const double kf = cosv / (fnorm * fnorm);
          for (std::size_t p = 0; p < hw; ++p) gf[p] += gv * (m[p] * inv - kf * f[p]);
        }
      }
    }
  });
}

Tensor project_correlation(const Tensor& correlation, const FrmParams& params) {
  if (correlation.rank() != 2 || correlation.dim(1) != params.channels) {
    throw ShapeError("project_correlation: expected [b," + std::to_string(params.channels) + "], got " +
                     shape_to_string(correlation.shape()));
  }
  const std::size_t b = correlation.dim(0), c = correlation.dim(1);
  Tensor v = reshape(correlation, {b, c, 1, 1});
  Tensor hidden = relu(conv2d(v, params.proj_fc1_kernel, params.proj_fc1_bias));
  return reshape(sigmoid(conv2d(hidden, params.proj_fc2_kernel, params.proj_fc2_bias)), {b, c});
}

Tensor refine(const Tensor& fused, const Tensor& gates) {
  if (fused.rank() != 4 || gates.rank() != 2 || gates.dim(0) != fused.dim(0) || gates.dim(1) != fused.dim(1)) {
    throw ShapeError("refine: gates " + shape_to_string(gates.shape()) + " do not match feature " +
                     shape_to_string(fused.shape()));
  }
  return scale_channels(fused, reshape(gates, {gates.dim(0), gates.dim(1), 1, 1}));
}

FrmOutput frm_forward(const Tensor& fused, const FrmParams& params) {
  params.validate();
  FrmOutput out;
  out.mask = predict_mask(fused, params);
  out.correlation = channel_correlation(out.mask, fused);
  out.gates = project_correlation(out.correlation, params);
  out.refined = refine(fused, out.gates);
  return out;
}

}  // namespace tfuse
