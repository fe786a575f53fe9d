#pragma once

#include <cstdint>
#include <random>

namespace maskcond {

/// splitmix64 finalizer; derives independent sub-stream seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

/// Explicit random stream. All randomness in the library flows through one of
/// these; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  /// True with probability p; exact for p = 0 and p = 1.
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace maskcond
