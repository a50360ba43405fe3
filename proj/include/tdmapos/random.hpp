#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace tdmapos {

/// Seeded pseudo-random stream. Every noise source owns one, so a run is a
/// pure function of (seed, call order) and noise sources do not perturb each
/// other when one of them is switched off.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Stream derived from a root seed plus a list of discriminators
  /// (device id, purpose tag, ...).
  RandomStream(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                     static_cast<std::uint32_t>(seed >> 32)};
    words.insert(words.end(), tags.begin(), tags.end());
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }
  double normal(double stddev) { return stddev == 0.0 ? 0.0 : stddev * normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::uint64_t bits() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace tdmapos
