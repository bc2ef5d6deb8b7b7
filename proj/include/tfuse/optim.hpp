#pragma once

#include <vector>

#include "tfuse/tensor.hpp"

namespace tfuse {

/// Momentum SGD: v <- momentum * v + g; p <- p - lr * v.
/// Velocity buffers are kept per parameter position in the set.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}

  /// Applies one update and clears the gradients. Throws if any parameter
  /// in `params` has no gradient from the preceding backward pass.
  void step(ParameterSet& params, double lr);

  double momentum() const { return momentum_; }

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

/// One-shot convenience for a stateless (or single) update.
void sgd_step(ParameterSet& params, double lr, double momentum = 0.0);

}  // namespace tfuse
