#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace a2tgpo {

namespace rng_detail {
// Marsaglia-Tsang ziggurat tables (128 layers), filled at static init.
extern const std::uint32_t* zig_kn();
extern const double* zig_wn();
extern const double* zig_fn();
}  // namespace rng_detail

// Deterministic seeded random stream (xoshiro256++ engine). One root seed per
// run; every consumer derives its own stream with a label (see derive_seed)
// so that parallel producers are order-independent and runs reproduce
// bit-exactly.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // True with probability p.
  bool bernoulli(double p) { return next_double() < p; }

  // Index in [0, weights.size()) with probability weights[i] / sum(weights).
  // Weights must be non-negative with a positive sum.
  std::size_t categorical(std::span<const double> weights);

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Standard normal deviate (ziggurat; the fast path is one engine call).
  double normal() {
    const std::int32_t hz = static_cast<std::int32_t>(next_u64() >> 32);
    const std::uint32_t iz = static_cast<std::uint32_t>(hz) & 127u;
    if (static_cast<std::uint32_t>(hz < 0 ? -hz : hz) < rng_detail::zig_kn()[iz])
      return hz * rng_detail::zig_wn()[iz];
    return normal_fix(hz, iz);
  }

 private:
  std::uint64_t s_[4];
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  double normal_fix(std::int32_t hz, std::uint32_t iz);
};

// Label-derived child seed: mixes the root with an arbitrary sequence of
// string and integer labels. Stable across runs and platforms.
class SeedLabel {
 public:
  explicit SeedLabel(std::uint64_t root);
  SeedLabel& operator<<(std::string_view s);
  SeedLabel& operator<<(std::uint64_t v);
  std::uint64_t finish() const;

 private:
  std::uint64_t h_;
};

std::uint64_t derive_seed(std::uint64_t root, std::string_view label);
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::string_view key,
                          std::uint64_t index);

}  // namespace a2tgpo
