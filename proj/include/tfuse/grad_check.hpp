#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tfuse/tensor.hpp"

namespace tfuse {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t probes = 0;
  std::size_t skipped_kinks = 0;
  std::string diagnostic;  // empty on success
};

struct GradCheckOptions {
  double tol = 1e-6;
  std::size_t n_probes = 10;  // per input
  /// When nonzero, replaces the per-input count: this many distinct
  /// coordinates drawn uniformly from all inputs together.
  std::size_t probe_budget = 0;
  /// Coordinates whose analytic gradient is smaller than this are not
  /// probed: below roughly eps*|f|/step, central differences measure
  /// rounding noise rather than the derivative.
  double min_abs_grad = 0.0;
  double step = 1e-5;
  /// Skip failing coordinates where the difference quotient itself is not
  /// stable: halving the step changes the central difference, or fails to
  /// halve the second difference, by more than `tol`. That happens at a kink
  /// (a ReLU or bilinear cell boundary within one step) or when rounding
  /// noise dominates. A skipped coordinate is replaced by the next candidate, so the
  /// probe count is kept where enough smooth coordinates exist.
  bool kink_screen = false;
  double abs_floor = 1e-12;
  std::uint64_t seed = 0;
};

/// Compares the tape gradient of a scalar computation against central
/// finite differences at randomly chosen coordinates of each input.
///
/// `f` must rebuild its graph from `inputs` on every call: the checker
/// perturbs the inputs' values in place (and restores them). Relative
/// error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace tfuse
