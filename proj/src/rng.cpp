#include "a2tgpo/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace a2tgpo {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct ZigguratTables {
  std::uint32_t kn[128];
  double wn[128];
  double fn[128];

  ZigguratTables() {
    const double m1 = 2147483648.0;
    double dn = 3.442619855899;
    double tn = dn;
    const double vn = 9.91256303526217e-3;

    double q = vn / std::exp(-0.5 * dn * dn);
    kn[0] = static_cast<std::uint32_t>((dn / q) * m1);
    kn[1] = 0;
    wn[0] = q / m1;
    wn[127] = dn / m1;
    fn[0] = 1.0;
    fn[127] = std::exp(-0.5 * dn * dn);
    for (int i = 126; i >= 1; --i) {
      dn = std::sqrt(-2.0 * std::log(vn / dn + std::exp(-0.5 * dn * dn)));
      kn[i + 1] = static_cast<std::uint32_t>((dn / tn) * m1);
      tn = dn;
      fn[i] = std::exp(-0.5 * dn * dn);
      wn[i] = dn / m1;
    }
  }
};

const ZigguratTables g_zig;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

}  // namespace

namespace rng_detail {
const std::uint32_t* zig_kn() { return g_zig.kn; }
const double* zig_wn() { return g_zig.wn; }
const double* zig_fn() { return g_zig.fn; }
}  // namespace rng_detail

RngStream::RngStream(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::size_t RngStream::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("categorical: bad weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("categorical: weights sum to zero");
  double u = next_double() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below: n == 0");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double RngStream::normal_fix(std::int32_t hz, std::uint32_t iz) {
  const double r = 3.442619855899;
  const std::uint32_t* kn = rng_detail::zig_kn();
  const double* wn = rng_detail::zig_wn();
  const double* fn = rng_detail::zig_fn();
  for (;;) {
    double x = hz * wn[iz];
    if (iz == 0) {
      // Base layer: sample the tail beyond r.
      double xx, y;
      do {
        xx = -std::log(next_double() + 1e-300) / r;
        y = -std::log(next_double() + 1e-300);
      } while (y + y < xx * xx);
      return (hz > 0) ? (r + xx) : -(r + xx);
    }
    if (fn[iz] + next_double() * (fn[iz - 1] - fn[iz]) < std::exp(-0.5 * x * x)) {
      return x;
    }
    hz = static_cast<std::int32_t>(next_u64() >> 32);
    iz = static_cast<std::uint32_t>(hz) & 127u;
    if (static_cast<std::uint32_t>(hz < 0 ? -hz : hz) < kn[iz]) {
      return hz * wn[iz];
    }
  }
}

SeedLabel::SeedLabel(std::uint64_t root) : h_(kFnvOffset) { *this << root; }

SeedLabel& SeedLabel::operator<<(std::string_view s) {
  for (unsigned char c : s) {
    h_ ^= c;
    h_ *= kFnvPrime;
  }
  h_ ^= 0xff;  // delimiter so ("ab","c") != ("a","bc")
  h_ *= kFnvPrime;
  return *this;
}

SeedLabel& SeedLabel::operator<<(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h_ ^= (v >> (8 * i)) & 0xff;
    h_ *= kFnvPrime;
  }
  return *this;
}

std::uint64_t SeedLabel::finish() const {
  std::uint64_t x = h_;
  return splitmix64(x);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return (SeedLabel(root) << label).finish();
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index) {
  return (SeedLabel(root) << label << index).finish();
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::string_view key,
                          std::uint64_t index) {
  return (SeedLabel(root) << label << key << index).finish();
}

}  // namespace a2tgpo
