#pragma once

// Seeded streams with a fully specified output sequence, so runs can be
// reproduced outside this library.
//
//   splitmix64:  state += 0x9E3779B97F4A7C15; z = state;
//                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//                z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//                return z ^ (z >> 31);
//   uniform():   (next() >> 11) · 2^-53, in [0,1)
//   below(n):    next() % n
//   normal():    Box-Muller on two uniforms, cos branch only
//   derive(seed, a, b): splitmix64 seeded with seed, a and b mixed in turn

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace feather {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) { return next() % n; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent stream for (seed, a, b), e.g. (run seed, epoch, purpose).
  static SplitMix64 derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    SplitMix64 mix(seed);
    SplitMix64 mix_a(mix.next() ^ a);
    SplitMix64 mix_b(mix_a.next() ^ b);
    return SplitMix64(mix_b.next());
  }

 private:
  std::uint64_t state_;
};

/// Fisher-Yates over `items` from the back: swap(items[i], items[below(i+1)]).
template <typename T>
void shuffle(std::span<T> items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(items[i], items[j]);
  }
}

}  // namespace feather
