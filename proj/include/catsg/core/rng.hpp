#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace catsg {

// splitmix64, used to fan a master seed out into named sub-streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// mt19937_64 is fully specified by the standard; the distributions are not,
// so the uniform/normal mappings below are our own. That keeps streams
// bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)), seed_base_(seed) {}

  // Named sub-stream, derived from the construction seed rather than the
  // evolving engine state. derive("noise") and derive("init") never collide.
  Rng derive(const std::string& name) const {
    return Rng(splitmix64(seed_base_) ^ fnv1a64(name));
  }
  Rng derive(std::uint64_t counter) const {
    return Rng(splitmix64(seed_base_) + 0x9e3779b97f4a7c15ULL * (counter + 1));
  }

  std::uint64_t bits() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n); modulo bias is < 2^-40 for every n used here
  std::uint64_t below(std::uint64_t n) { return eng_() % n; }

  // Box-Muller; caches the second variate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform draw from the (k-1)-simplex via normalized exponentials.
  std::vector<double> simplex(int k) {
    std::vector<double> w(static_cast<size_t>(k));
    double total = 0.0;
    for (auto& v : w) {
      double u = 0.0;
      while (u <= 0.0) u = uniform();
      v = -std::log(u);
      total += v;
    }
    for (auto& v : w) v /= total;
    return w;
  }

 private:
  std::mt19937_64 eng_;
  std::uint64_t seed_base_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Conventional entry point: every consumer of randomness takes its own named
// stream off the run's master seed.
inline Rng named_stream(std::uint64_t master, const std::string& name) {
  return Rng(master).derive(name);
}

}  // namespace catsg
