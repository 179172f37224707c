#ifndef TTA_RNG_HPP
#define TTA_RNG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

#include <random>

namespace tta {

/// Seeded generator with platform-independent draws. The standard distribution
/// classes are implementation-defined, so draws are derived from the raw 64-bit
/// stream here to keep runs reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; no cached second value, so state is just the engine.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Knuth's method for small means, normal approximation above 60.
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 60.0) return std::max(0L, std::lround(mean + std::sqrt(mean) * normal()));
    const double limit = std::exp(-mean);
    long k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }

  /// Inverse-CDF draw from a discrete distribution (weights need not be normalized).
  template <class T>
  std::size_t categorical(std::span<const T> weights) {
    double total = 0.0;
    for (T w : weights) total += static_cast<double>(w);
    if (!(total > 0.0)) throw std::invalid_argument("Rng::categorical: weights sum to zero");
    const double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += static_cast<double>(weights[i]);
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  /// Derive an independent child stream (e.g. per seed, per image).
  Rng fork(std::uint64_t salt) {
    return Rng(splitmix(next_u64() ^ splitmix(salt + 0x9e3779b97f4a7c15ULL)));
  }

  /// Independent stream number `index` of a seed, e.g. one per image.
  static Rng stream(std::uint64_t seed, std::uint64_t index) { return Rng(splitmix(seed ^ splitmix(index + 1))); }

  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  [[nodiscard]] std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  static Rng deserialize(const std::string& state) {
    Rng r;
    std::istringstream is(state);
    is >> r.engine_;
    if (!is) throw std::runtime_error("corrupt RNG state");
    return r;
  }

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tta

#endif  // TTA_RNG_HPP
