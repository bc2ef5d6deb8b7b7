#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tfuse {

/// Seeded generator with platform-independent derived distributions.
/// std::mt19937_64 output is fixed by the standard; the standard library
/// distributions are not, so they are avoided to keep checkpoints
/// byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a label (FNV-1a + splitmix).
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

/// FNV-1a 64-bit over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace tfuse
