#include "tfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tfuse/init.hpp"
#include "tfuse/mask_analysis.hpp"
#include "tfuse/ops.hpp"

namespace tfuse {

namespace {

constexpr std::size_t kStemWidth1 = 8;
constexpr std::size_t kStemWidth2 = 16;
// Objectness prior of 0.1 at initialization.
constexpr double kObjectnessPriorBias = -2.1972245773362196;

Tensor conv_kernel(Shape shape, Rng& rng, double gain = 1.4142135623730951) {
  const auto fan_in = conv_fan_in(shape);
  return kaiming_uniform(std::move(shape), fan_in, rng, gain);
}

template <typename F>
void for_each_tensor(F&& f, std::initializer_list<Tensor*> ts) {
  for (Tensor* t : ts) f(*t);
}

}  // namespace

BackboneParams BackboneParams::init(std::size_t channels, Rng& rng) {
  BackboneParams p;
  p.conv1_kernel = conv_kernel({kStemWidth1, 1, 3, 3}, rng);
  p.conv1_bias = Tensor::zeros({kStemWidth1}, true);
  p.conv2_kernel = conv_kernel({kStemWidth2, kStemWidth1, 3, 3}, rng);
  p.conv2_bias = Tensor::zeros({kStemWidth2}, true);
  p.conv3_kernel = conv_kernel({channels, kStemWidth2, 3, 3}, rng);
  p.conv3_bias = Tensor::zeros({channels}, true);
  return p;
}

ParameterSet BackboneParams::parameters(const std::string& prefix) const {
  ParameterSet set;
  set.add(prefix + "conv1_kernel", conv1_kernel);
  set.add(prefix + "conv1_bias", conv1_bias);
  set.add(prefix + "conv2_kernel", conv2_kernel);
  set.add(prefix + "conv2_bias", conv2_bias);
  set.add(prefix + "conv3_kernel", conv3_kernel);
  set.add(prefix + "conv3_bias", conv3_bias);
  return set;
}

BackboneParams BackboneParams::frozen() const {
  BackboneParams p = *this;
  for_each_tensor([](Tensor& t) { t = t.detach(); },
                  {&p.conv1_kernel, &p.conv1_bias, &p.conv2_kernel, &p.conv2_bias, &p.conv3_kernel, &p.conv3_bias});
  return p;
}

Tensor luminance(const Tensor& rgb) {
  Shape s = rgb.shape();
  if (s.size() == 3) s.insert(s.begin(), 1);
  if (s.size() != 4 || s[1] != 3) throw ShapeError("luminance: expected [b,3,H,W] or [3,H,W], got " + shape_to_string(rgb.shape()));
  const std::size_t b = s[0], hw = s[2] * s[3];
  const auto src = rgb.data();
  std::vector<double> out(b * hw);
  for (std::size_t n = 0; n < b; ++n) {
    const double* r = src.data() + n * 3 * hw;
    for (std::size_t p = 0; p < hw; ++p) out[n * hw + p] = 0.299 * r[p] + 0.587 * r[hw + p] + 0.114 * r[2 * hw + p];
  }
  return Tensor::from({b, 1, s[2], s[3]}, std::move(out));
}

Tensor backbone_branch(const Tensor& image, const BackboneParams& p) {
  Tensor x = relu(conv2d(image, p.conv1_kernel, p.conv1_bias, 2, 1));
  x = relu(conv2d(x, p.conv2_kernel, p.conv2_bias, 2, 1));
  return relu(conv2d(x, p.conv3_kernel, p.conv3_bias, 2, 1));
}

FeaturePair backbone_forward(const Tensor& rgb_luma, const Tensor& thermal, const BackboneParams& params) {
  if (rgb_luma.shape() != thermal.shape()) {
    throw ShapeError("backbone_forward: modality shapes differ: " + shape_to_string(rgb_luma.shape()) + " vs " +
                     shape_to_string(thermal.shape()));
  }
  return {backbone_branch(rgb_luma, params), backbone_branch(thermal, params)};
}

HeadParams HeadParams::init(std::size_t channels, Rng& rng) {
  const std::size_t c = channels;
  HeadParams p;
  p.conv1_kernel = conv_kernel({c, c, 3, 3}, rng);
  p.conv1_bias = Tensor::zeros({c}, true);
  p.conv2_kernel = conv_kernel({c, c, 3, 3}, rng);
  p.conv2_bias = Tensor::zeros({c}, true);
  p.obj_kernel = conv_kernel({1, c, 1, 1}, rng, 0.1);
  p.obj_bias = Tensor::full({1}, kObjectnessPriorBias, true);
  p.reg_kernel = conv_kernel({4, c, 1, 1}, rng, 0.1);
  p.reg_bias = Tensor::full({4}, 1.0, true);
  return p;
}

HeadParams HeadParams::zeros(std::size_t channels) {
  const std::size_t c = channels;
  HeadParams p;
  p.conv1_kernel = Tensor::zeros({c, c, 3, 3}, true);
  p.conv1_bias = Tensor::zeros({c}, true);
  p.conv2_kernel = Tensor::zeros({c, c, 3, 3}, true);
  p.conv2_bias = Tensor::zeros({c}, true);
  p.obj_kernel = Tensor::zeros({1, c, 1, 1}, true);
  p.obj_bias = Tensor::zeros({1}, true);
  p.reg_kernel = Tensor::zeros({4, c, 1, 1}, true);
  p.reg_bias = Tensor::zeros({4}, true);
  return p;
}

ParameterSet HeadParams::parameters(const std::string& prefix) const {
  ParameterSet set;
  set.add(prefix + "conv1_kernel", conv1_kernel);
  set.add(prefix + "conv1_bias", conv1_bias);
  set.add(prefix + "conv2_kernel", conv2_kernel);
  set.add(prefix + "conv2_bias", conv2_bias);
  set.add(prefix + "obj_kernel", obj_kernel);
  set.add(prefix + "obj_bias", obj_bias);
  set.add(prefix + "reg_kernel", reg_kernel);
  set.add(prefix + "reg_bias", reg_bias);
  return set;
}

HeadParams HeadParams::frozen() const {
  HeadParams p = *this;
  for_each_tensor([](Tensor& t) { t = t.detach(); },
                  {&p.conv1_kernel, &p.conv1_bias, &p.conv2_kernel, &p.conv2_bias, &p.obj_kernel, &p.obj_bias,
                   &p.reg_kernel, &p.reg_bias});
  return p;
}

HeadOutput head_forward(const Tensor& features, const HeadParams& p) {
  if (features.rank() != 4) throw ShapeError("head_forward: expected [b,c,h,w], got " + shape_to_string(features.shape()));
  const std::size_t b = features.dim(0), h = features.dim(2), w = features.dim(3);
  Tensor x = relu(conv2d(features, p.conv1_kernel, p.conv1_bias, 1, 1));
  x = relu(conv2d(x, p.conv2_kernel, p.conv2_bias, 1, 1));
  Tensor obj = sigmoid(conv2d(x, p.obj_kernel, p.obj_bias, 1, 0));
  return {reshape(obj, {b, h, w}), softplus(conv2d(x, p.reg_kernel, p.reg_bias, 1, 0))};
}

std::array<double, 4> encode_ltrb(const Box& box, std::size_t row, std::size_t col, std::size_t stride) {
  const double s = static_cast<double>(stride);
  const double cx = (static_cast<double>(col) + 0.5) * s, cy = (static_cast<double>(row) + 0.5) * s;
  return {(cx - box.x1) / s, (cy - box.y1) / s, (box.x2 - cx) / s, (box.y2 - cy) / s};
}

Box decode_ltrb(const std::array<double, 4>& d, std::size_t row, std::size_t col, std::size_t stride) {
  const double s = static_cast<double>(stride);
  const double cx = (static_cast<double>(col) + 0.5) * s, cy = (static_cast<double>(row) + 0.5) * s;
  return {cx - d[0] * s, cy - d[1] * s, cx + d[2] * s, cy + d[3] * s};
}

DetectionTargets assign_targets(const std::vector<std::vector<GroundTruthBox>>& boxes, std::size_t height,
                                std::size_t width, std::size_t stride) {
  const std::size_t b = boxes.size(), hw = height * width;
  std::vector<double> pos(b * hw, 0.0), ltrb(b * 4 * hw, 0.0);
  std::size_t n_pos = 0;
  const double s = static_cast<double>(stride);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < height; ++i) {
      const double cy = (static_cast<double>(i) + 0.5) * s;
      for (std::size_t j = 0; j < width; ++j) {
        const double cx = (static_cast<double>(j) + 0.5) * s;
        const GroundTruthBox* best = nullptr;
        for (const auto& gt : boxes[n]) {
          const Box& bx = gt.box;
          if (cx < bx.x1 || cx >= bx.x2 || cy < bx.y1 || cy >= bx.y2) continue;
          if (best == nullptr || bx.area() < best->box.area()) best = &gt;
        }
        if (best == nullptr) continue;
        pos[n * hw + i * width + j] = 1.0;
        ++n_pos;
        const auto d = encode_ltrb(best->box, i, j, stride);
        for (std::size_t k = 0; k < 4; ++k) ltrb[(n * 4 + k) * hw + i * width + j] = d[k];
      }
    }
  }
  return {Tensor::from({b, height, width}, std::move(pos)), Tensor::from({b, 4, height, width}, std::move(ltrb)),
          n_pos};
}

Tensor mask_targets(const std::vector<std::vector<GroundTruthBox>>& boxes, std::size_t image_size, std::size_t stride) {
  std::vector<BoxLevelMask> masks;
  masks.reserve(boxes.size());
  for (const auto& bs : boxes) masks.push_back(downsample_mask_nearest(rasterize_boxes(bs, image_size, image_size), stride));
  return stack_masks(masks);
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) >= iou_threshold; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_and_nms(const HeadOutput& out, std::size_t index, std::size_t stride,
                                      std::size_t image_size, double score_floor, double nms_iou,
                                      std::size_t image_id) {
  const std::size_t h = out.objectness.dim(1), w = out.objectness.dim(2), hw = h * w;
  if (index >= out.objectness.dim(0)) throw std::out_of_range("decode_and_nms: batch index out of range");
  const auto obj = out.objectness.data();
  const auto reg = out.ltrb.data();
  const double limit = static_cast<double>(image_size);
  std::vector<Detection> candidates;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double score = obj[index * hw + i * w + j];
      if (score < score_floor) continue;
      std::array<double, 4> d{};
      for (std::size_t k = 0; k < 4; ++k) d[k] = reg[(index * 4 + k) * hw + i * w + j];
      const Box box = clip_box(decode_ltrb(d, i, j, stride), limit, limit);
      if (!box.valid()) continue;
      candidates.push_back({box, score, image_id});
    }
  }
  return nms(std::move(candidates), nms_iou);
}

DetectorParams DetectorParams::init(const ExperimentConfig& cfg) {
  cfg.validate();
  DetectorParams p;
  Rng backbone_rng(derive_seed(cfg.seed, "init/backbone"));
  p.backbone = BackboneParams::init(cfg.channels, backbone_rng);
  Rng ffm_rng(derive_seed(cfg.seed, "init/ffm"));
  p.ffm = FfmParams::init({cfg.channels, cfg.ffm_variant, 3, 4}, ffm_rng);
  if (cfg.frm_enabled) {
    Rng frm_rng(derive_seed(cfg.seed, "init/frm"));
    p.frm = FrmParams::init(cfg.channels, frm_rng);
  }
  Rng head_rng(derive_seed(cfg.seed, "init/head"));
  p.head = HeadParams::init(cfg.channels, head_rng);
  return p;
}

ParameterSet DetectorParams::parameters() const {
  ParameterSet set = backbone.parameters();
  set.append(ffm.parameters());
  if (frm.channels != 0) set.append(frm.parameters());
  set.append(head.parameters());
  return set;
}

DetectorParams DetectorParams::frozen() const {
  DetectorParams p;
  p.backbone = backbone.frozen();
  p.ffm = ffm.frozen();
  p.frm = frm.channels != 0 ? frm.frozen() : frm;
  p.head = head.frozen();
  return p;
}

namespace {

bool mask_branch_runs(const ExperimentConfig& cfg) {
  return cfg.frm_enabled && (!cfg.frm_gates_open || cfg.use_seg || cfg.use_neg_corr);
}

bool projection_runs(const ExperimentConfig& cfg) {
  return cfg.frm_enabled && (!cfg.frm_gates_open || cfg.use_neg_corr);
}

}  // namespace

ParameterSet trainable_parameters(const DetectorParams& params, const ExperimentConfig& cfg) {
  ParameterSet set = params.backbone.parameters();
  set.append(params.ffm.parameters());
  if (mask_branch_runs(cfg)) set.append(params.frm.segmentation_parameters());
  if (projection_runs(cfg)) set.append(params.frm.projection_parameters());
  set.append(params.head.parameters());
  return set;
}

Batch make_batch(const std::vector<DatasetSample>& samples, const std::vector<std::size_t>& indices,
                 const std::vector<bool>& flips) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  if (!flips.empty() && flips.size() != indices.size()) throw std::invalid_argument("make_batch: flips/indices size mismatch");
  const auto& first = samples.at(indices.front());
  const std::size_t h = first.rgb.dim(1), w = first.rgb.dim(2), hw = h * w, b = indices.size();
  std::vector<double> rgb(b * 3 * hw), thermal(b * hw);
  Batch batch;
  batch.boxes.reserve(b);
  for (std::size_t n = 0; n < b; ++n) {
    const auto& s = samples.at(indices[n]);
    if (s.rgb.shape() != Shape{3, h, w} || s.thermal.shape() != Shape{1, h, w}) {
      throw ShapeError("make_batch: samples differ in extent");
    }
    const bool flip = !flips.empty() && flips[n];
    const auto src_rgb = s.rgb.data();
    const auto src_t = s.thermal.data();
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = flip ? w - 1 - x : x;
        for (std::size_t ch = 0; ch < 3; ++ch) rgb[(n * 3 + ch) * hw + y * w + x] = src_rgb[ch * hw + y * w + sx];
        thermal[n * hw + y * w + x] = src_t[y * w + sx];
      }
    }
    auto boxes = s.boxes;
    if (flip) {
      const double wd = static_cast<double>(w);
      for (auto& gt : boxes) gt.box = {wd - gt.box.x2, gt.box.y1, wd - gt.box.x1, gt.box.y2};
    }
    batch.boxes.push_back(std::move(boxes));
  }
  batch.rgb_luma = luminance(Tensor::from({b, 3, h, w}, std::move(rgb)));
  batch.thermal = Tensor::from({b, 1, h, w}, std::move(thermal));
  return batch;
}

ForwardResult detector_forward(const DetectorParams& params, const ExperimentConfig& cfg, const Batch& batch) {
  ForwardResult r;
  r.features = backbone_forward(batch.rgb_luma, batch.thermal, params.backbone);
  r.ffm = ffm_forward(r.features, params.ffm);
  r.refined = r.ffm.fused;
  if (mask_branch_runs(cfg)) r.mask = predict_mask(r.ffm.fused, params.frm);
  if (projection_runs(cfg)) {
    r.gates = project_correlation(channel_correlation(r.mask, r.ffm.fused), params.frm);
    if (!cfg.frm_gates_open) r.refined = refine(r.ffm.fused, r.gates);
  }
  r.head = head_forward(r.refined, params.head);
  return r;
}

StepLoss compute_loss(const ForwardResult& fwd, const Batch& batch, const ExperimentConfig& cfg) {
  const std::size_t h = fwd.head.objectness.dim(1), w = fwd.head.objectness.dim(2);
  const auto targets = assign_targets(batch.boxes, h, w, cfg.fusion_stride);
  const auto det = detection_loss(fwd.head.objectness, fwd.head.ltrb, targets);

  StepLoss out;
  auto& b = out.breakdown;
  b.alpha = cfg.alpha;
  b.epsilon = cfg.epsilon;
  b.det_cls = det.cls.item();
  b.det_reg = det.reg.item();

  std::vector<Tensor> corr_terms;
  if (fwd.mask.defined()) {
    const Tensor gt = mask_targets(batch.boxes, cfg.image_size, cfg.fusion_stride);
    Tensor seg;
    if (cfg.use_seg) {
      const Tensor bce = bce_loss(gt, fwd.mask);
      const Tensor dice = dice_loss(gt, fwd.mask, cfg.epsilon);
      seg = add(bce, dice);
      b.bce = bce.item();
      b.dice = dice.item();
    } else {
      b.bce = bce_loss(gt, fwd.mask.detach()).item();
      b.dice = dice_loss(gt, fwd.mask.detach(), cfg.epsilon).item();
    }
    b.seg = b.bce + b.dice;
    Tensor neg;
    if (fwd.gates.defined()) {
      neg = neg_corr_loss(cfg.use_neg_corr ? fwd.gates : fwd.gates.detach());
      b.neg_corr = neg.item();
    }
    if (cfg.corr_max_active()) {
      Tensor corr;
      if (cfg.use_seg) corr = seg;
      if (cfg.use_neg_corr) {
        const Tensor weighted = scale(neg, cfg.alpha);
        corr = corr.defined() ? add(corr, weighted) : weighted;
      }
      b.corr_max = corr.item();
      corr_terms.push_back(corr);
    }
  }
  out.total = corr_terms.empty() ? add(det.cls, det.reg) : total_loss(det, corr_terms);
  b.total = out.total.item();
  return out;
}

}  // namespace tfuse
