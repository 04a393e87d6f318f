#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>

namespace adsac {

// Deterministic random source. All variates are derived from the raw
// mt19937_64 stream with fixed algorithms, so sequences do not depend on
// standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [lo, hi], both ends inclusive. Lemire rejection, no modulo bias.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * span;
    auto low = static_cast<std::uint64_t>(m);
    if (low < span) {
      const std::uint64_t threshold = (0 - span) % span;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * span;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return lo + static_cast<std::int64_t>(m >> 64);
  }

  // Exponential variate with the given rate (mean 1/rate).
  double exponential(double rate) {
    if (rate <= 0.0) throw std::invalid_argument("exponential: rate must be positive");
    const double u = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    return -std::log(u) / rate;
  }

  // Standard normal, Box-Muller; the paired variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

// Child seed for an independent named stream. Streams with distinct
// (root, stream, index) triples never share state.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                 std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(root ^ detail::fnv1a64(stream));
  h = detail::splitmix64(h ^ detail::splitmix64(index));
  return h;
}

}  // namespace adsac
