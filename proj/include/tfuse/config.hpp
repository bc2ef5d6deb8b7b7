#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "tfuse/ffm.hpp"

namespace tfuse {

/// Every hyperparameter, ablation switch and seed of one experiment.
/// Serialized as flat `key = value` text in a fixed key order; the hash of
/// that canonical text identifies the experiment in every artifact.
struct ExperimentConfig {
  // model
  std::size_t image_size = 64;
  std::size_t channels = 16;
  std::size_t fusion_stride = 8;
  FfmVariant ffm_variant = FfmVariant::adaptive_rp_globalcc;
  bool frm_enabled = true;
  bool frm_gates_open = false;  // replace the gates by 1 (FRM becomes the identity on F_x)
  bool use_seg = true;
  bool use_neg_corr = true;
  double alpha = 0.1;
  double epsilon = 1.0;
  // optimization
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
  bool flip = true;
  std::uint64_t seed = 1;
  // data
  std::uint64_t data_seed = 1;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t max_pedestrians = 3;
  std::size_t max_distractors = 2;
  double night_attenuation = 0.2;
  // inference
  double nms_iou = 0.5;
  double score_floor = 0.05;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  std::string to_text() const;
  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// 16 hex digits of FNV-1a over to_text().
  std::string hash() const;

  /// Whether the correlation-maximum loss contributes to the objective.
  bool corr_max_active() const { return frm_enabled && (use_seg || use_neg_corr); }
  std::size_t feature_size() const { return image_size / fusion_stride; }
};

/// Named rows of the component ablation lattice.
enum class AblationRow { ffm, ffm_frm, ffm_frm_seg, ffm_frm_seg_neg };
std::string to_string(AblationRow row);
ExperimentConfig apply_ablation(ExperimentConfig base, AblationRow row);

}  // namespace tfuse
