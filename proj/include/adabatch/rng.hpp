#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace adabatch {

// Deterministic random stream. All distribution transforms are implemented
// here (not via std:: distributions, whose output is implementation-defined)
// so that a seed reproduces bit-identical draws on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed), seed_mix_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in (0, 1]: 53-bit mantissa, never exactly 0 so log() is safe
  double uniform01() {
    return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
  }

  // standard normal via Box-Muller; the spare value is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // uniform integer in [lo, hi], rejection sampled to avoid modulo bias
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t reject_below = (0 - span) % span;  // 2^64 mod span
    std::uint64_t draw = gen_();
    while (draw < reject_below) draw = gen_();
    return lo + static_cast<std::int64_t>(draw % span);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::int64_t i = static_cast<std::int64_t>(items.size()) - 1; i > 0; --i) {
      std::swap(items[static_cast<std::size_t>(i)],
                items[static_cast<std::size_t>(uniform_int(0, i))]);
    }
  }

  // independent substream, e.g. one per Monte-Carlo trial or per worker
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = seed_mix_ + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_mix_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace adabatch
