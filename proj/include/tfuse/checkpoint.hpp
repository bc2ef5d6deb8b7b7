#pragma once

#include <filesystem>
#include <string>

#include "tfuse/config.hpp"
#include "tfuse/model.hpp"

// Checkpoint directory:
//   config.txt    canonical config text
//   manifest.txt  format tag, config hash, one "param <name> <shape> <file>" line each
//   params/*.tft  one TFT1 file per parameter
// Every file is written atomically.

namespace tfuse {

struct Checkpoint {
  ExperimentConfig config;
  DetectorParams params;
};

void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg, const DetectorParams& params);

/// Throws std::runtime_error when the manifest hash disagrees with the
/// stored config, or when the parameter list or shapes do not match the
/// model the config describes.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace tfuse
