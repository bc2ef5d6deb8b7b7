#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tfuse/grad_check.hpp"

// Finite-difference checks of every differentiable operation on random
// shapes. Suites: ops, ffm, frm, losses, full (or all).

namespace tfuse {

struct GradCase {
  std::string suite;
  std::string name;
  std::string shape;  // human-readable description of the random instance
  GradCheckReport report;
};

std::vector<std::string> grad_suite_names();

/// Throws std::invalid_argument for an unknown suite name.
std::vector<GradCase> run_grad_suite(const std::string& suite, std::uint64_t seed = 7, std::size_t n_shapes = 5);

}  // namespace tfuse
