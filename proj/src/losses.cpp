#include "tfuse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "tfuse/ops.hpp"

namespace tfuse {

using detail::make_result;
using detail::Node;

namespace {

void require_binary(const Tensor& gt, const char* what) {
  for (double v : gt.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string(what) + ": ground truth must be binary");
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor bce_loss(const Tensor& gt, const Tensor& pred) {
  require_same(gt, pred, "bce_loss");
  require_binary(gt, "bce_loss");
  constexpr double lo = LossConstants::probability_clamp, hi = 1.0 - LossConstants::probability_clamp;
  auto g = gt.data();
  auto p = pred.data();
  const double n = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], lo, hi);
    acc -= g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q);
  }
  return make_result({1}, {acc / n}, {gt, pred}, [n](Node& self) {
    Node& pg = *self.parents[0];
    Node& pp = *self.parents[1];
    if (!pp.requires_grad) return;
    auto grad = pp.grad_buffer();
    const double up = self.grad[0] / n;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double q = pp.value[i];
      if (q < lo || q > hi) continue;
      grad[i] += up * (-pg.value[i] / q + (1.0 - pg.value[i]) / (1.0 - q));
    }
  });
}

Tensor dice_loss(const Tensor& gt, const Tensor& pred, double epsilon) {
  require_same(gt, pred, "dice_loss");
  require_binary(gt, "dice_loss");
  if (gt.rank() < 1) throw ShapeError("dice_loss: need a batch axis");
  const std::size_t b = gt.dim(0), per = gt.numel() / b;
  auto g = gt.data();
  auto p = pred.data();
  std::vector<double> inter(b), denom(b);
  double acc = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    double i2 = 0.0, sg = 0.0, sp = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      i2 += g[n * per + k] * p[n * per + k];
      sg += g[n * per + k];
      sp += p[n * per + k];
    }
    inter[n] = 2.0 * i2 + epsilon;
    denom[n] = sg + sp + epsilon;
    acc += 1.0 - inter[n] / denom[n];
  }
  return make_result({1}, {acc / static_cast<double>(b)}, {gt, pred}, [b, per, inter, denom](Node& self) {
    Node& pg = *self.parents[0];
    Node& pp = *self.parents[1];
    if (!pp.requires_grad) return;
    auto grad = pp.grad_buffer();
    const double up = self.grad[0] / static_cast<double>(b);
    for (std::size_t n = 0; n < b; ++n) {
      const double d2 = denom[n] * denom[n];
      for (std::size_t k = 0; k < per; ++k) {
        const double gk = pg.value[n * per + k];
        grad[n * per + k] -= up * (2.0 * gk * denom[n] - inter[n]) / d2;
      }
    }
  });
}

Tensor seg_loss(const Tensor& gt, const Tensor& pred, double epsilon) {
  return add(bce_loss(gt, pred), dice_loss(gt, pred, epsilon));
}

Tensor neg_corr_loss(const Tensor& gates) {
  constexpr double lo = LossConstants::probability_clamp;
  auto s = gates.data();
  const double n = static_cast<double>(s.size());
  if (s.empty()) throw ShapeError("neg_corr_loss: empty gate tensor");
  double acc = 0.0;
  for (double v : s) acc -= std::log(std::clamp(v, lo, 1.0));
  return make_result({1}, {acc / n}, {gates}, [n](Node& self) {
    Node& ps = *self.parents[0];
    auto grad = ps.grad_buffer();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double v = ps.value[i];
      if (v < lo || v > 1.0) continue;
      grad[i] -= self.grad[0] / (n * v);
    }
  });
}

Tensor corr_max_loss(const Tensor& gt, const Tensor& pred_mask, const Tensor& gates, double alpha, double epsilon) {
  return add(seg_loss(gt, pred_mask, epsilon), scale(neg_corr_loss(gates), alpha));
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& weight) {
  require_same(pred, target, "smooth_l1");
  require_same(pred, weight, "smooth_l1");
  auto p = pred.data();
  auto t = target.data();
  auto w = weight.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (w[i] == 0.0) continue;
    const double d = std::abs(p[i] - t[i]);
    acc += w[i] * (d < 1.0 ? 0.5 * d * d : d - 0.5);
  }
  return make_result({1}, {acc}, {pred, target, weight}, [](Node& self) {
    Node& pp = *self.parents[0];
    Node& pt = *self.parents[1];
    Node& pw = *self.parents[2];
    // Touch the buffers so an all-zero weight still yields a (zero) gradient.
    if (pp.requires_grad) pp.grad_buffer();
    if (pt.requires_grad) pt.grad_buffer();
    for (std::size_t i = 0; i < pp.value.size(); ++i) {
      if (pw.value[i] == 0.0) continue;
      const double d = pp.value[i] - pt.value[i];
      const double slope = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      const double gv = self.grad[0] * pw.value[i] * slope;
      if (pp.requires_grad) pp.grad_buffer()[i] += gv;
      if (pt.requires_grad) pt.grad_buffer()[i] -= gv;
    }
  });
}

DetectionLoss detection_loss(const Tensor& objectness, const Tensor& ltrb, const DetectionTargets& targets) {
  if (objectness.rank() != 3 || ltrb.rank() != 4 || ltrb.dim(1) != 4 || ltrb.dim(0) != objectness.dim(0) ||
      ltrb.dim(2) != objectness.dim(1) || ltrb.dim(3) != objectness.dim(2)) {
    throw ShapeError("detection_loss: objectness [b,h,w] and ltrb [b,4,h,w] disagree");
  }
  require_same(objectness, targets.positive, "detection_loss");
  require_same(ltrb, targets.ltrb, "detection_loss");
  DetectionLoss out;
  out.cls = bce_loss(targets.positive, objectness);

  const std::size_t b = objectness.dim(0), hw = objectness.dim(1) * objectness.dim(2);
  std::vector<double> weight(ltrb.numel(), 0.0);
  auto pos = targets.positive.data();
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(targets.n_positive, 1));
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      if (pos[n * hw + p] == 0.0) continue;
      for (std::size_t k = 0; k < 4; ++k) weight[(n * 4 + k) * hw + p] = norm;
    }
  }
  out.reg = smooth_l1(ltrb, targets.ltrb, Tensor::from(ltrb.shape(), std::move(weight)));
  return out;
}

Tensor total_loss(const DetectionLoss& det, const std::vector<Tensor>& corr_max_per_level) {
  if (corr_max_per_level.empty()) throw std::invalid_argument("total_loss: at least one fusion level is required");
  Tensor total = add(det.cls, det.reg);
  for (const auto& level : corr_max_per_level) total = add(total, level);
  return total;
}

std::string loss_log_header() { return "step,bce,dice,seg,neg_corr,corr_max,det_cls,det_reg,total\n"; }

std::string loss_log_row(std::size_t step, const LossBreakdown& b) {
  std::ostringstream os;
  os << std::setprecision(10) << step << ',' << b.bce << ',' << b.dice << ',' << b.seg << ',' << b.neg_corr << ','
     << b.corr_max << ',' << b.det_cls << ',' << b.det_reg << ',' << b.total << '\n';
  return os.str();
}

}  // namespace tfuse
