#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tfuse/boxes.hpp"

namespace tfuse {

/// Protocol constants for miss-rate evaluation, kept in one place.
struct MissRateProtocol {
  static constexpr std::size_t n_reference_points = 9;
  /// FPPI reference points, log-spaced over [1e-2, 1e0].
  static std::array<double, n_reference_points> reference_fppi();
  static constexpr double miss_rate_floor = 1e-5;
  static constexpr double fp_report_score = 0.3;
};

enum class MatchStatus { tp, fp };

struct MatchResult {
  std::size_t image_id = 0;
  std::size_t detection_index = 0;  // position within the image's detection list
  double score = 0.0;
  MatchStatus status = MatchStatus::fp;
  std::optional<std::size_t> matched_gt;  // index within the image's GT list
  /// TP: IoU with the claimed GT. FP: highest IoU with any GT of the image.
  double iou = 0.0;
};

/// Matching outcome for a whole dataset. `matches` is ordered by image id,
/// then by descending score within an image.
struct MatchSet {
  std::vector<MatchResult> matches;
  std::vector<std::size_t> false_negatives;  // per image
  std::size_t n_images = 0;
  std::size_t n_gt = 0;

  std::size_t true_positives() const;
  std::size_t false_positives() const;
  std::size_t total_false_negatives() const;
};

using DetectionsPerImage = std::vector<std::vector<Detection>>;
using GroundTruthPerImage = std::vector<std::vector<GroundTruthBox>>;

/// Greedy matching: per image, detections in descending score order claim
/// the unclaimed GT with the highest IoU >= iou_threshold.
MatchSet match_detections(const DetectionsPerImage& detections, const GroundTruthPerImage& ground_truth,
                          double iou_threshold = 0.5);

struct FppiPoint {
  double fppi = 0.0;
  double miss_rate = 1.0;
};

struct MissRateCurve {
  std::array<FppiPoint, MissRateProtocol::n_reference_points> points{};
  double mr = 1.0;
};

/// Sweeps thresholds at every distinct score. Throws if n_gt == 0.
MissRateCurve mr_fppi_curve(const std::vector<MatchResult>& matches, std::size_t n_images, std::size_t n_gt);

struct ApResult {
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap = 0.0;
  std::vector<double> per_threshold;
};

/// 101-point interpolated AP of one matching. Throws if n_gt == 0.
double average_precision_at(const std::vector<MatchResult>& matches, std::size_t n_gt);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

/// Re-runs matching per IoU threshold (in parallel) and averages.
ApResult average_precision(const DetectionsPerImage& detections, const GroundTruthPerImage& ground_truth,
                           const std::vector<double>& iou_thresholds = coco_iou_thresholds());

enum class FpRankMode { by_score, by_iou };
std::string to_string(FpRankMode mode);
FpRankMode fp_rank_mode_from_string(const std::string& s);

struct AblationPoint {
  double fraction = 0.0;
  std::size_t removed = 0;
  double mr = 1.0;
};

/// Deletes the top `fraction` of false positives (ranked by score, or by
/// highest IoU with any GT) and recomputes MR on what remains.
std::vector<AblationPoint> fp_ablation(const MatchSet& match_set, FpRankMode mode, const std::vector<double>& fractions);

struct MetricReport {
  double mr = 1.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap = 0.0;
  std::array<FppiPoint, MissRateProtocol::n_reference_points> fppi_points{};
  std::size_t fp_count = 0;  // FPs with score >= MissRateProtocol::fp_report_score
  std::size_t n_images = 0;
  std::size_t n_gt = 0;
  std::size_t n_detections = 0;
};

MetricReport evaluate_detections(const DetectionsPerImage& detections, const GroundTruthPerImage& ground_truth);

// Text formats: one record per line, comma- or whitespace-separated,
// '#' starts a comment.
//   detections:   image_id x1 y1 x2 y2 score
//   ground truth: image_id x1 y1 x2 y2 [occlusion]
DetectionsPerImage read_detections(const std::filesystem::path& path, std::size_t n_images = 0);
GroundTruthPerImage read_ground_truth(const std::filesystem::path& path, std::size_t n_images = 0);
std::string format_detections(const DetectionsPerImage& detections);
std::string format_ground_truth(const GroundTruthPerImage& ground_truth);

/// key,value rows; the first row carries the config hash.
std::string metric_report_csv(const MetricReport& report, const std::string& config_hash);
std::string fp_ablation_csv(const std::vector<std::pair<FpRankMode, std::vector<AblationPoint>>>& curves);

}  // namespace tfuse
