#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tfuse/boxes.hpp"
#include "tfuse/tensor.hpp"

// Synthetic aligned RGB-thermal pedestrian scenes.
//
// Pedestrians are upright rectangles that are warm in thermal and colored
// in RGB. Distractors appear in one modality only: hot blobs in thermal, or
// pedestrian-shaped cold figures in RGB. Odd-indexed images are "night"
// images whose RGB contrast is attenuated.

namespace tfuse {

struct ExperimentConfig;

enum class Split { train, val };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetOptions {
  std::size_t image_size = 64;
  std::size_t max_pedestrians = 3;
  std::size_t max_distractors = 2;
  double night_attenuation = 0.2;

  static DatasetOptions from_config(const ExperimentConfig& cfg);
};

struct DatasetSample {
  std::uint64_t id = 0;
  Tensor rgb;      // [3,H,W] in [0,1]
  Tensor thermal;  // [1,H,W] in [0,1]
  std::vector<GroundTruthBox> boxes;
  bool night = false;
  /// H*W, 1 where a pedestrian rectangle was painted.
  std::vector<std::uint8_t> pedestrian_paint;
};

/// Deterministic given (seed, split); image i depends only on (seed, split, i).
/// Pixel values are representable in float32 so they survive TFT1 exactly.
std::vector<DatasetSample> generate_dataset(std::uint64_t seed, std::size_t n_images, Split split,
                                            const DatasetOptions& options = {});

/// Directory layout: rgb/<i>.tft, thermal/<i>.tft, gt.txt (evaluation ground
/// truth format) and meta.txt.
void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetSample>& samples);
std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir);

std::vector<std::vector<GroundTruthBox>> ground_truth_of(const std::vector<DatasetSample>& samples);

}  // namespace tfuse
