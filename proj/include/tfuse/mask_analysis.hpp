#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tfuse/boxes.hpp"
#include "tfuse/evaluation.hpp"
#include "tfuse/tensor.hpp"

namespace tfuse {

/// Spatial mask on a height x width grid. Ground-truth masks hold only
/// 0/1; predicted masks hold post-sigmoid values in (0,1).
struct BoxLevelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double operator()(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& operator()(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double sum() const;
  bool is_binary() const;
  Tensor to_tensor() const;  // [1,h,w]
};

/// Pixel (x, y) is set iff x1 <= x < x2 and y1 <= y < y2 for some box.
BoxLevelMask rasterize_boxes(const std::vector<GroundTruthBox>& boxes, std::size_t height, std::size_t width);

/// Output (i,j) = input (i*factor, j*factor). Factor must divide both extents.
BoxLevelMask downsample_mask_nearest(const BoxLevelMask& mask, std::size_t factor);

/// Stacks masks into a [b,h,w] tensor (no gradient).
Tensor stack_masks(const std::vector<BoxLevelMask>& masks);

/// c x c inner products between RGB channel i and thermal channel j.
struct RelationMatrix {
  std::size_t channels = 0;
  std::vector<double> entries;

  double operator()(std::size_t i, std::size_t j) const { return entries[i * channels + j]; }
};

/// Accepts [c,h,w] or [1,c,h,w] stacks of identical shape. With
/// `l2_normalize`, each flattened channel map is scaled to unit norm first
/// (all-zero maps stay zero).
RelationMatrix relation_matrix(const Tensor& rgb, const Tensor& thermal, bool l2_normalize = false);

struct AnrAir {
  double anr = 0.0;
  double air = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // degenerate matrices left out of the means
};

struct RatioPair {
  double nr = 0.0;
  double ir = 0.0;
  bool degenerate = false;
};

/// Per-matrix diagonal over off-diagonal mean (NR) and median (IR) ratios,
/// averaged over rows. A row whose off-diagonal mean or median is within
/// 1e-12 of zero marks the matrix degenerate.
RatioPair diagonal_ratios(const RelationMatrix& m);

/// Dataset means of NR and IR over non-degenerate matrices. When every
/// matrix is degenerate, anr and air are NaN and n_used is 0.
AnrAir anr_air(const std::vector<RelationMatrix>& matrices);

/// Unmatched detections with score >= score_threshold.
std::size_t count_false_positives(const std::vector<MatchResult>& matches, double score_threshold);

std::string anr_air_csv_header();
std::string anr_air_csv_row(const std::string& dataset, std::size_t channels, const AnrAir& result);

}  // namespace tfuse
