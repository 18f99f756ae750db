#pragma once

// Shared scalar/matrix typedefs, error types and the deterministic RNG
// streams used everywhere.
//
// Reproducibility convention: every consumer of randomness derives a private
// stream from (seed, index...) via RngStream::derive and never shares engines.
// Results are therefore independent of evaluation order and thread count.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pgdpo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Configuration / precondition violations. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Non-finite losses, aborted runs. The CLI maps this to exit code 3.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& m) : std::runtime_error(m) {}
};

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based stream: state is a small xoshiro256++ engine whose seed is a
// splitmix64 hash of (seed, a, b). Gaussians via Box-Muller with a cached
// spare, so a stream's draw sequence is a pure function of its identifiers.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) { init(seed); }
  RngStream(uint64_t seed, uint64_t a, uint64_t b = 0) { init(derive(seed, a, b)); }

  static uint64_t derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t x = seed;
    uint64_t h = splitmix64(x);
    x = h ^ (a + 0x9e3779b97f4a7c15ull);
    h = splitmix64(x);
    x = h ^ (b + 0xd1b54a32d192ed03ull);
    return splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on (0,1]
  double uniform01() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 6.283185307179586476925286766559 * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
  }

  // rejection sampling; nsd > 0 keeps the loop's acceptance probability high
  double truncated_normal(double mean, double sd, double nsd) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= nsd) return mean + sd * z;
    }
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  void init(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : s_) s = splitmix64(x);
    have_spare_ = false;
    spare_ = 0.0;
  }
  uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace pgdpo
