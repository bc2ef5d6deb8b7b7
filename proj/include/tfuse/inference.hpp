#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tfuse/checkpoint.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/evaluation.hpp"
#include "tfuse/mask_analysis.hpp"

namespace tfuse {

/// Detections for every sample; image ids are dataset positions.
DetectionsPerImage run_inference(const DetectorParams& params, const ExperimentConfig& cfg,
                                 const std::vector<DatasetSample>& samples, std::size_t batch_size = 50);

struct ModelEvaluation {
  MetricReport report;
  DetectionsPerImage detections;
  MatchSet matches;
};

/// Throws std::invalid_argument on an empty dataset or one whose images do
/// not match the checkpoint's image size, and propagates the n_gt = 0 error.
ModelEvaluation evaluate_model(const Checkpoint& checkpoint, const std::vector<DatasetSample>& samples);

/// One JSON object per image: {"image", "id", "config_hash", "detections": [{box, score}]}.
std::string detections_jsonl(const DetectionsPerImage& detections, const std::vector<DatasetSample>& samples,
                             const std::string& config_hash);

struct FeatureAnalysis {
  std::vector<RelationMatrix> matrices;
  AnrAir ratios;
};

/// Relation matrices of the backbone feature pair of every sample.
FeatureAnalysis analyze_features(const Checkpoint& checkpoint, const std::vector<DatasetSample>& samples,
                                 bool l2_normalize = false);

/// Predicted deformable offsets per sample, [1, 2*k*k, h, w] each. Throws for fixed_rp.
std::vector<Tensor> predict_sample_offsets(const Checkpoint& checkpoint, const std::vector<DatasetSample>& samples);

}  // namespace tfuse
