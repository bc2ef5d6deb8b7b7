#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "tfuse/boxes.hpp"
#include "tfuse/config.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/ffm.hpp"
#include "tfuse/frm.hpp"
#include "tfuse/losses.hpp"
#include "tfuse/tensor.hpp"

namespace tfuse {

/// Shared stem: three stride-2 3x3 conv + rectifier blocks, 1 -> 8 -> 16 -> c.
struct BackboneParams {
  Tensor conv1_kernel, conv1_bias, conv2_kernel, conv2_bias, conv3_kernel, conv3_bias;

  static BackboneParams init(std::size_t channels, Rng& rng);
  ParameterSet parameters(const std::string& prefix = "backbone.") const;
  BackboneParams frozen() const;
};

/// [b,3,H,W] or [3,H,W] -> [b,1,H,W] luminance (0.299, 0.587, 0.114). No gradient.
Tensor luminance(const Tensor& rgb);

Tensor backbone_branch(const Tensor& image, const BackboneParams& params);
/// Both modalities pass through the same weights.
FeaturePair backbone_forward(const Tensor& rgb_luma, const Tensor& thermal, const BackboneParams& params);

/// Two 3x3 conv + rectifier layers, then 1x1 objectness and 1x1 ltrb heads.
struct HeadParams {
  Tensor conv1_kernel, conv1_bias, conv2_kernel, conv2_bias;
  Tensor obj_kernel, obj_bias, reg_kernel, reg_bias;

  static HeadParams init(std::size_t channels, Rng& rng);
  static HeadParams zeros(std::size_t channels);
  ParameterSet parameters(const std::string& prefix = "head.") const;
  HeadParams frozen() const;
};

struct HeadOutput {
  Tensor objectness;  // [b,h,w], sigmoid
  Tensor ltrb;        // [b,4,h,w], softplus, stride units
};

HeadOutput head_forward(const Tensor& features, const HeadParams& params);

/// Distances from the centre of cell (row, col) to the box sides, in stride units.
std::array<double, 4> encode_ltrb(const Box& box, std::size_t row, std::size_t col, std::size_t stride);
Box decode_ltrb(const std::array<double, 4>& ltrb, std::size_t row, std::size_t col, std::size_t stride);

/// A cell is positive when its centre lies inside a box (half-open); a cell
/// inside several boxes takes the smallest.
DetectionTargets assign_targets(const std::vector<std::vector<GroundTruthBox>>& boxes, std::size_t height,
                                std::size_t width, std::size_t stride);

/// Box-level masks rasterized at image resolution and downsampled to the
/// feature grid, [b, H/stride, W/stride].
Tensor mask_targets(const std::vector<std::vector<GroundTruthBox>>& boxes, std::size_t image_size, std::size_t stride);

/// Greedy suppression in descending score order (ties keep input order).
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

/// Decodes image `index` of a head output: cells with objectness >= score_floor
/// become boxes (clipped to the image), then NMS.
std::vector<Detection> decode_and_nms(const HeadOutput& out, std::size_t index, std::size_t stride,
                                      std::size_t image_size, double score_floor, double nms_iou,
                                      std::size_t image_id);

struct DetectorParams {
  BackboneParams backbone;
  FfmParams ffm;
  FrmParams frm;  // empty unless the config enables FRM
  HeadParams head;

  /// Each module draws from its own seed stream, so toggling FRM leaves the
  /// other modules' initial weights unchanged.
  static DetectorParams init(const ExperimentConfig& cfg);
  ParameterSet parameters() const;
  DetectorParams frozen() const;
};

/// Parameters that receive a gradient from the configured objective.
ParameterSet trainable_parameters(const DetectorParams& params, const ExperimentConfig& cfg);

struct Batch {
  Tensor rgb_luma;  // [b,1,H,W]
  Tensor thermal;   // [b,1,H,W]
  std::vector<std::vector<GroundTruthBox>> boxes;
  std::size_t size() const { return boxes.size(); }
};

/// `flips[i]` mirrors sample indices[i] horizontally (boxes included).
Batch make_batch(const std::vector<DatasetSample>& samples, const std::vector<std::size_t>& indices,
                 const std::vector<bool>& flips = {});

struct ForwardResult {
  FeaturePair features;
  FfmOutput ffm;
  Tensor refined;  // F_y (F_x itself when FRM is off or its gates are open)
  Tensor mask;     // undefined unless the mask branch runs
  Tensor gates;    // undefined unless the projection runs
  HeadOutput head;
};

ForwardResult detector_forward(const DetectorParams& params, const ExperimentConfig& cfg, const Batch& batch);

struct StepLoss {
  Tensor total;
  LossBreakdown breakdown;
};

StepLoss compute_loss(const ForwardResult& fwd, const Batch& batch, const ExperimentConfig& cfg);

}  // namespace tfuse
