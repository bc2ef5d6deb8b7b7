#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfuse/config.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/losses.hpp"
#include "tfuse/model.hpp"

namespace tfuse {

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Base rate, x0.1 from step floor(2T/3), x0.01 from step floor(11T/12).
double learning_rate_at(const ExperimentConfig& cfg, std::size_t step, std::size_t total_steps);

std::size_t steps_per_epoch(const ExperimentConfig& cfg, std::size_t n_train);

struct TrainResult {
  DetectorParams params;
  std::vector<LossBreakdown> history;  // one entry per step
  std::string loss_csv;                // config hash comment, header, one row per step
};

using StepCallback = std::function<void(std::size_t step, std::size_t total, const LossBreakdown&)>;

/// Deterministic given the config: seeded init, seeded per-epoch shuffle and
/// flips, a fixed iteration order and deterministic kernels. Throws
/// TrainingDiverged on a non-finite loss.
TrainResult train(const ExperimentConfig& cfg, const std::vector<DatasetSample>& train_set,
                  const StepCallback& on_step = {});
/// Generates the training split from cfg.data_seed first.
TrainResult train(const ExperimentConfig& cfg, const StepCallback& on_step = {});

}  // namespace tfuse
