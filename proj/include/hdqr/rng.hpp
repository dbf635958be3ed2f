#pragma once

// Seed derivation for independent, reproducible random streams.

#include <cmath>
#include <cstdint>
#include <random>

namespace hdqr {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of stream `index` under `seed`, optionally split further by `tag`.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t tag = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ tag);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t tag = 0) {
  return std::mt19937_64(stream_seed(seed, index, tag));
}

/// Standard normal draws by the polar method. Written out so that streams do
/// not depend on the standard library's distribution implementation.
class NormalSampler {
 public:
  double operator()(std::mt19937_64& g) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform(g) - 1.0;
      v = 2.0 * uniform(g) - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Uniform on [0, 1) from the top 53 bits.
  static double uniform(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace hdqr
