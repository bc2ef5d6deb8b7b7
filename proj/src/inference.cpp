#include "tfuse/inference.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "tfuse/model.hpp"
#include "tfuse/ops.hpp"

namespace tfuse {

namespace {

void check_dataset(const ExperimentConfig& cfg, const std::vector<DatasetSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluation: empty dataset");
  const Shape expected{3, cfg.image_size, cfg.image_size};
  for (const auto& s : samples) {
    if (s.rgb.shape() != expected) {
      throw std::invalid_argument("evaluation: image extent " + shape_to_string(s.rgb.shape()) +
                                  " does not match config image_size " + std::to_string(cfg.image_size));
    }
  }
}

template <typename F>
void for_each_chunk(std::size_t n, std::size_t chunk, F&& f) {
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    f(idx);
  }
}

}  // namespace

DetectionsPerImage run_inference(const DetectorParams& params, const ExperimentConfig& cfg,
                                 const std::vector<DatasetSample>& samples, std::size_t batch_size) {
  check_dataset(cfg, samples);
  const DetectorParams frozen = params.frozen();
  DetectionsPerImage out(samples.size());
  for_each_chunk(samples.size(), batch_size, [&](const std::vector<std::size_t>& idx) {
    const auto fwd = detector_forward(frozen, cfg, make_batch(samples, idx));
    for (std::size_t n = 0; n < idx.size(); ++n) {
      out[idx[n]] = decode_and_nms(fwd.head, n, cfg.fusion_stride, cfg.image_size, cfg.score_floor, cfg.nms_iou, idx[n]);
    }
  });
  return out;
}

ModelEvaluation evaluate_model(const Checkpoint& checkpoint, const std::vector<DatasetSample>& samples) {
  ModelEvaluation ev;
  ev.detections = run_inference(checkpoint.params, checkpoint.config, samples);
  const auto gt = ground_truth_of(samples);
  ev.report = evaluate_detections(ev.detections, gt);
  ev.matches = match_detections(ev.detections, gt);
  return ev;
}

std::string detections_jsonl(const DetectionsPerImage& detections, const std::vector<DatasetSample>& samples,
                             const std::string& config_hash) {
  std::string out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    nlohmann::json row;
    row["image"] = i;
    row["id"] = i < samples.size() ? samples[i].id : 0;
    row["config_hash"] = config_hash;
    row["detections"] = nlohmann::json::array();
    for (const auto& d : detections[i]) {
      row["detections"].push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"score", d.score}});
    }
    out += row.dump();
    out += '\n';
  }
  return out;
}

FeatureAnalysis analyze_features(const Checkpoint& checkpoint, const std::vector<DatasetSample>& samples,
                                 bool l2_normalize) {
  check_dataset(checkpoint.config, samples);
  const auto backbone = checkpoint.params.backbone.frozen();
  FeatureAnalysis fa;
  fa.matrices.resize(samples.size());
  for_each_chunk(samples.size(), 50, [&](const std::vector<std::size_t>& idx) {
    const Batch batch = make_batch(samples, idx);
    const auto pair = backbone_forward(batch.rgb_luma, batch.thermal, backbone);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      fa.matrices[idx[n]] =
          relation_matrix(slice_batch(pair.rgb, n, 1), slice_batch(pair.thermal, n, 1), l2_normalize);
    }
  });
  fa.ratios = anr_air(fa.matrices);
  return fa;
}

std::vector<Tensor> predict_sample_offsets(const Checkpoint& checkpoint, const std::vector<DatasetSample>& samples) {
  check_dataset(checkpoint.config, samples);
  const auto params = checkpoint.params.frozen();
  std::vector<Tensor> out(samples.size());
  for_each_chunk(samples.size(), 50, [&](const std::vector<std::size_t>& idx) {
    const Batch batch = make_batch(samples, idx);
    const auto pair = backbone_forward(batch.rgb_luma, batch.thermal, params.backbone);
    const Tensor offsets = predict_offsets(pair, params.ffm);
    for (std::size_t n = 0; n < idx.size(); ++n) out[idx[n]] = slice_batch(offsets, n, 1);
  });
  return out;
}

}  // namespace tfuse
