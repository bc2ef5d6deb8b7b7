#include "tfuse/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "tfuse/optim.hpp"
#include "tfuse/rng.hpp"

namespace tfuse {

double learning_rate_at(const ExperimentConfig& cfg, std::size_t step, std::size_t total_steps) {
  const std::size_t first = total_steps * 2 / 3;
  const std::size_t second = total_steps * 11 / 12;
  if (step >= second) return cfg.lr * 0.01;
  if (step >= first) return cfg.lr * 0.1;
  return cfg.lr;
}

std::size_t steps_per_epoch(const ExperimentConfig& cfg, std::size_t n_train) {
  if (n_train < cfg.batch_size) {
    throw std::invalid_argument("train: " + std::to_string(n_train) + " training images cannot fill a batch of " +
                                std::to_string(cfg.batch_size));
  }
  return n_train / cfg.batch_size;
}

TrainResult train(const ExperimentConfig& cfg, const std::vector<DatasetSample>& train_set, const StepCallback& on_step) {
  cfg.validate();
  const std::size_t per_epoch = steps_per_epoch(cfg, train_set.size());
  const std::size_t total = per_epoch * cfg.epochs;

  TrainResult result;
  result.params = DetectorParams::init(cfg);
  ParameterSet trainable = trainable_parameters(result.params, cfg);
  Sgd optimizer(cfg.momentum);
  Rng order_rng(derive_seed(cfg.seed, "train/order"));

  std::ostringstream csv;
  csv << "# config_hash " << cfg.hash() << '\n' << loss_log_header();
  result.history.reserve(total);

  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t k = 0; k < per_epoch; ++k, ++step) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(k * cfg.batch_size),
                                   order.begin() + static_cast<std::ptrdiff_t>((k + 1) * cfg.batch_size));
      std::vector<bool> flips(idx.size(), false);
      if (cfg.flip) {
        for (std::size_t n = 0; n < flips.size(); ++n) flips[n] = order_rng.bernoulli(0.5);
      }
      const Batch batch = make_batch(train_set, idx, flips);
      const auto fwd = detector_forward(result.params, cfg, batch);
      auto loss = compute_loss(fwd, batch, cfg);
      if (!std::isfinite(loss.breakdown.total)) {
        throw TrainingDiverged(step, "training diverged at step " + std::to_string(step) + " (epoch " +
                                         std::to_string(epoch) + "): total loss " +
                                         std::to_string(loss.breakdown.total));
      }
      loss.total.backward();
      optimizer.step(trainable, learning_rate_at(cfg, step, total));
      csv << loss_log_row(step, loss.breakdown);
      result.history.push_back(loss.breakdown);
      if (on_step) on_step(step, total, loss.breakdown);
    }
  }
  result.loss_csv = csv.str();
  return result;
}

TrainResult train(const ExperimentConfig& cfg, const StepCallback& on_step) {
  const auto data = generate_dataset(cfg.data_seed, cfg.n_train, Split::train, DatasetOptions::from_config(cfg));
  return train(cfg, data, on_step);
}

}  // namespace tfuse
