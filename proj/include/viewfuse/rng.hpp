#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace vf {

// Deterministic RNG. mt19937_64 has a standard-pinned sequence, and we map
// raw bits to doubles ourselves, so streams are identical across platforms
// (std::uniform_real_distribution / normal_distribution are not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in (0, 1].
  double uniform() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    double u = static_cast<double>(engine_() >> 11) * 0x1p-53;
    return lo + u * (hi - lo);
  }

  int uniform_int(int lo, int hi_inclusive) {
    // Modulo bias is irrelevant for the ranges used here (< 2^31).
    std::uint64_t span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  // Standard normal via Box-Muller; the paired sample is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vf
