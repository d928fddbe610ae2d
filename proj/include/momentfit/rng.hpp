#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace momentfit {

// Deterministic random numbers. The standard <random> distributions are
// implementation-defined, so everything that must reproduce bit-for-bit
// across toolchains is hand-rolled here: xoshiro256++ core, splitmix64
// seeding/stream derivation, Box-Muller normals, CDF-inversion Poisson.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent substream seed from a root seed and up to two
// stream identifiers (replicate index, cluster index, variable index, ...).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = root;
  std::uint64_t out = splitmix64_next(s);
  s ^= (a + 1) * 0xbf58476d1ce4e5b9ULL;
  out ^= splitmix64_next(s);
  s ^= (b + 1) * 0x94d049bb133111ebULL;
  out ^= splitmix64_next(s);
  return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64_next(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0,1); never returns an exact 0 (safe under log).
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Exact Poisson draw by CDF inversion; large rates are split so the
  // running term never underflows.
  long poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 30.0) return poisson(lambda / 2.0) + poisson(lambda - lambda / 2.0);
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    long k = 0;
    while (u > cdf && k < 400) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

  // Uniform integer in [0, n), rejection-sampled so the draw is unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  // Index draw from a discrete distribution given by probs (sum ~ 1).
  int categorical(const std::vector<double>& probs) {
    const double u = uniform();
    double cdf = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cdf += probs[i];
      if (u < cdf) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // Fisher-Yates, driven only by below() so the permutation is portable.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace momentfit
