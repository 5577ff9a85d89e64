#pragma once

#include <cmath>
#include <cstdint>

namespace koopman {

// SplitMix64 generator. Chosen over std:: engines because its output (and the
// uniform/gaussian draws below, which avoid std::*_distribution) is identical
// across standard libraries, so a seed pins datasets byte for byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed), seed_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one draw per call keeps the stream position predictable.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Independent child stream; stream(i) depends only on (seed, i), never on
  // how much of this generator has been consumed.
  Rng stream(std::uint64_t index) const {
    Rng mixer(seed_ ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    return Rng(mixer.next());
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t state_;
  std::uint64_t seed_;
};

}  // namespace koopman
