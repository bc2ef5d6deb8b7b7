#include "tfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tfuse/kernels.hpp"

namespace tfuse {

namespace {

using detail::make_result;
using detail::Node;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

// Applies f elementwise; df(x, y) is the local derivative given input x and output y.
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

kernels::ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t groups, std::size_t stride,
                                    std::size_t padding, const char* what) {
  require_rank(input, 4, what);
  require_rank(kernel, 4, what);
  if (groups == 0) throw std::invalid_argument(std::string(what) + ": groups must be positive");
  if (stride == 0) throw std::invalid_argument(std::string(what) + ": stride must be >= 1");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[2] != ks[3] || ks[2] % 2 == 0) {
    throw ShapeError(std::string(what) + ": kernel must be square with odd extent, got " + shape_to_string(ks));
  }
  if (is[1] % groups != 0 || ks[0] % groups != 0) {
    throw ShapeError(std::string(what) + ": channel counts " + std::to_string(is[1]) + "/" + std::to_string(ks[0]) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (ks[1] != is[1] / groups) {
    throw ShapeError(std::string(what) + ": kernel expects " + std::to_string(ks[1] * groups) +
                     " input channels, input has " + std::to_string(is[1]));
  }
  if (is[2] + 2 * padding < ks[2] || is[3] + 2 * padding < ks[3]) {
    throw ShapeError(std::string(what) + ": kernel larger than padded input");
  }
  kernels::ConvGeometry g;
  g.batch = is[0];
  g.in_channels = is[1];
  g.in_height = is[2];
  g.in_width = is[3];
  g.out_channels = ks[0];
  g.kernel = ks[2];
  g.stride = stride;
  g.padding = padding;
  g.groups = groups;
  return g;
}

}  // namespace

Tensor grouped_conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t groups,
                      std::size_t stride, std::size_t padding) {
  const auto g = conv_geometry(input, kernel, groups, stride, padding, "conv2d");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.out_channels) + "], got " +
                     shape_to_string(bias.shape()));
  }
  std::vector<double> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  kernels::omp::conv_forward(g, input.data(), kernel.data(),
                             bias.defined() ? bias.data() : std::span<const double>{}, out);
  Shape shape{g.batch, g.out_channels, g.out_height(), g.out_width()};
  const bool has_bias = bias.defined();
  std::vector<Tensor> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), inputs, [g, has_bias](Node& self) {
    Node& in = *self.parents[0];
    Node& k = *self.parents[1];
    if (in.requires_grad) kernels::omp::conv_backward_input(g, self.grad, k.value, in.grad_buffer());
    const bool bias_grad = has_bias && self.parents[2]->requires_grad;
    if (k.requires_grad || bias_grad) {
      std::vector<double> scratch_k;
      std::span<double> gk;
      if (k.requires_grad) {
        gk = k.grad_buffer();
      } else {
        scratch_k.assign(k.value.size(), 0.0);
        gk = scratch_k;
      }
      kernels::omp::conv_backward_params(g, self.grad, in.value, gk,
                                         bias_grad ? self.parents[2]->grad_buffer() : std::span<double>{});
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  return grouped_conv2d(input, kernel, bias, 1, stride, padding);
}

Tensor bilinear_sample(const Tensor& input, const Tensor& coords) {
  require_rank(input, 4, "bilinear_sample");
  require_rank(coords, 4, "bilinear_sample");
  if (coords.dim(0) != input.dim(0) || coords.dim(1) != 2) {
    throw ShapeError("bilinear_sample: coords must be [b,2,h',w'], got " + shape_to_string(coords.shape()));
  }
  kernels::SampleGeometry g;
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.in_height = input.dim(2);
  g.in_width = input.dim(3);
  g.out_height = coords.dim(2);
  g.out_width = coords.dim(3);
  std::vector<double> out(g.batch * g.channels * g.out_height * g.out_width);
  kernels::omp::bilinear_forward(g, input.data(), coords.data(), out);
  return make_result({g.batch, g.channels, g.out_height, g.out_width}, std::move(out), {input, coords},
                     [g](Node& self) {
                       Node& in = *self.parents[0];
                       Node& co = *self.parents[1];
                       if (in.requires_grad) kernels::omp::bilinear_backward_input(g, self.grad, co.value, in.grad_buffer());
                       if (co.requires_grad) {
                         kernels::omp::bilinear_backward_coords(g, self.grad, in.value, co.value, co.grad_buffer());
                       }
                     });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  auto in = input.data();
  std::vector<double> out(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += in[p * hw + i];
    out[p] = acc / static_cast<double>(hw);
  }
  return make_result({input.dim(0), input.dim(1), 1, 1}, std::move(out), {input}, [planes, hw](Node& self) {
    Node& p = *self.parents[0];
    auto g = p.grad_buffer();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t c = 0; c < planes; ++c) {
      const double v = self.grad[c] * inv;
      for (std::size_t i = 0; i < hw; ++i) g[c * hw + i] += v;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      auto g = parent->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v) + " (clamp first)");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  require_rank(x, 4, "scale_channels");
  require_rank(s, 4, "scale_channels");
  if (s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1) || s.dim(2) != 1 || s.dim(3) != 1) {
    throw ShapeError("scale_channels: scale must be [b,c,1,1] matching " + shape_to_string(x.shape()) + ", got " +
                     shape_to_string(s.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  auto xv = x.data();
  auto sv = s.data();
  std::vector<double> out(xv.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = xv[p * hw + i] * sv[p];
  }
  return make_result(x.shape(), std::move(out), {x, s}, [planes, hw](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    if (px.requires_grad) {
      auto g = px.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += self.grad[p * hw + i] * ps.value[p];
      }
    }
    if (ps.requires_grad) {
      auto g = ps.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += self.grad[p * hw + i] * px.value[p * hw + i];
        g[p] += acc;
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1}, {acc}, {a}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor add_n(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: empty term list");
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
  }
  return make_result(std::move(shape), copy_of(a.data()), {a}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: incompatible " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(batch * (ca + cb) * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av.begin() + n * ca * hw, ca * hw, out.begin() + n * (ca + cb) * hw);
    std::copy_n(bv.begin() + n * cb * hw, cb * hw, out.begin() + (n * (ca + cb) + ca) * hw);
  }
  return make_result({batch, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b}, [batch, ca, cb, hw](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t n = 0; n < batch; ++n) {
      const double* src = self.grad.data() + n * (ca + cb) * hw;
      if (pa.requires_grad) {
        auto g = pa.grad_buffer();
        for (std::size_t i = 0; i < ca * hw; ++i) g[n * ca * hw + i] += src[i];
      }
      if (pb.requires_grad) {
        auto g = pb.grad_buffer();
        for (std::size_t i = 0; i < cb * hw; ++i) g[n * cb * hw + i] += src[ca * hw + i];
      }
    }
  });
}

Tensor slice_channels(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank(a, 4, "slice_channels");
  const std::size_t batch = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  if (start + count > c || count == 0) throw ShapeError("slice_channels: range out of bounds");
  auto av = a.data();
  std::vector<double> out(batch * count * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av.begin() + (n * c + start) * hw, count * hw, out.begin() + n * count * hw);
  }
  return make_result({batch, count, a.dim(2), a.dim(3)}, std::move(out), {a},
                     [batch, c, hw, start, count](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t n = 0; n < batch; ++n) {
                         for (std::size_t i = 0; i < count * hw; ++i) {
                           g[(n * c + start) * hw + i] += self.grad[n * count * hw + i];
                         }
                       }
                     });
}

Tensor slice_batch(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() == 0) throw ShapeError("slice_batch: rank-0 tensor");
  if (start + count > a.dim(0) || count == 0) throw ShapeError("slice_batch: range out of bounds");
  const std::size_t item = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  auto av = a.data();
  std::vector<double> out(av.begin() + start * item, av.begin() + (start + count) * item);
  return make_result(std::move(shape), std::move(out), {a}, [start, item](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * item + i] += self.grad[i];
  });
}

}  // namespace tfuse
