#pragma once

#include <array>
#include <cstdint>

namespace adverseg {

// splitmix64 step; used for seeding and for deriving substream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256** seeded through splitmix64.
///
/// Stream k of seed s is seeded with splitmix64 state
/// `s ^ mix(k)`, where mix(k) is the first splitmix64 output for state k.
/// Stream 0 of seed s uses state `s ^ mix(0)` as well, so Rng(s) and
/// Rng(s, 0) are the same generator. All derived floating-point draws use
/// only integer arithmetic plus IEEE basic operations, except normal() which
/// also calls std::log / std::cos.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  static Rng from_state(const State& state) noexcept;

  std::uint64_t next_u64() noexcept;

  // 53-bit uniform in [0, 1).
  double uniform01() noexcept;
  // Uniform in [a, b]; returns a when a == b.
  double uniform(double a, double b) noexcept;
  double normal(double mean, double stddev) noexcept;
  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept;

  // Independent substream derived from this generator's current output.
  Rng split(std::uint64_t stream) noexcept;

  const State& state() const noexcept { return s_; }

 private:
  Rng() = default;

  State s_{};
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace adverseg
