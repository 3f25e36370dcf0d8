#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tabtoken {

// Deterministic RNG utilities. The mt19937_64 engine is fully specified by
// the standard, but the distribution classes are not, so every draw below is
// implemented by hand to keep results bit-identical across platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(engine_() >> 11) * kInv53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    const double u = uniform();
    auto v = static_cast<std::uint64_t>(u * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  // Fisher-Yates; std::shuffle is implementation-defined so we roll our own.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a64(std::string_view text);

// Derives an independent child seed from a master seed, a purpose tag and an
// index. Used to give every pipeline stage (init, shuffling, dropout, subset
// sampling, ...) its own stream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

}  // namespace tabtoken
