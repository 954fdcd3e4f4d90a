#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pss {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from (seed, tag...). Used so that every
/// pipeline stage and every per-page sampler gets its own reproducible seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return derive_seed(seed, h);
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag, std::uint64_t n) {
  return derive_seed(derive_seed(seed, tag), n);
}

/// Deterministic RNG. Only raw mt19937_64 output is consumed (the engine's
/// output sequence is pinned by the standard); all distributions are derived
/// here so results do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return static_cast<std::uint64_t>((static_cast<__uint128_t>(next()) * n) >> 64);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Geometric length with support {1,2,...} and the given mean (mean >= 1).
  int geometric_length(double mean) {
    if (mean < 1.0) throw std::invalid_argument("geometric mean must be >= 1");
    double q = 1.0 / mean;
    double u = uniform();
    if (q >= 1.0) return 1;
    double len = 1.0 + std::floor(std::log1p(-u) / std::log1p(-q));
    if (len < 1.0) len = 1.0;
    if (len > 1e6) len = 1e6;
    return static_cast<int>(len);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace pss
