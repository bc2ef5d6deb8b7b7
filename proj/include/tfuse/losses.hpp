#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tfuse/tensor.hpp"

namespace tfuse {

struct LossConstants {
  static constexpr double probability_clamp = 1e-7;
  static constexpr double default_alpha = 0.1;    // weight of the negative-correlation term
  static constexpr double default_epsilon = 1.0;  // Dice smoothing
};

/// Mean over all b*h*w pixels of -[g log p + (1-g) log(1-p)] with p clamped
/// to [1e-7, 1-1e-7]. `gt` must be binary.
Tensor bce_loss(const Tensor& gt, const Tensor& pred);

/// Per-sample 1 - (2*sum(g*p) + eps) / (sum(g) + sum(p) + eps), averaged over the batch.
Tensor dice_loss(const Tensor& gt, const Tensor& pred, double epsilon = LossConstants::default_epsilon);

Tensor seg_loss(const Tensor& gt, const Tensor& pred, double epsilon = LossConstants::default_epsilon);

/// -(1/(b*c)) * sum log s, with s clamped to [1e-7, 1].
Tensor neg_corr_loss(const Tensor& gates);

Tensor corr_max_loss(const Tensor& gt, const Tensor& pred_mask, const Tensor& gates,
                     double alpha = LossConstants::default_alpha, double epsilon = LossConstants::default_epsilon);

/// Per-cell supervision for the dense head.
struct DetectionTargets {
  Tensor positive;  // [b,h,w], 1 where a cell center lies inside a GT box
  Tensor ltrb;      // [b,4,h,w], distances in stride units (valid on positive cells)
  std::size_t n_positive = 0;
};

struct DetectionLoss {
  Tensor cls;
  Tensor reg;
};

/// cls: BCE of objectness over every cell. reg: smooth-L1 (beta 1) over the
/// four distances of positive cells, divided by max(n_positive, 1).
DetectionLoss detection_loss(const Tensor& objectness, const Tensor& ltrb, const DetectionTargets& targets);

Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& weight);

/// det.cls + det.reg + sum of per-level correlation-maximum losses. Throws
/// on an empty level list.
Tensor total_loss(const DetectionLoss& det, const std::vector<Tensor>& corr_max_per_level);

struct LossBreakdown {
  double bce = 0.0;
  double dice = 0.0;
  double seg = 0.0;
  double neg_corr = 0.0;
  double corr_max = 0.0;
  double det_cls = 0.0;
  double det_reg = 0.0;
  double total = 0.0;
  double alpha = LossConstants::default_alpha;
  double epsilon = LossConstants::default_epsilon;
};

std::string loss_log_header();
std::string loss_log_row(std::size_t step, const LossBreakdown& b);

}  // namespace tfuse
