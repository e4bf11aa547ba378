#pragma once

#include <cstdint>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace riskpipe {

// SplitMix64 finalizer. Used to derive independent child seeds from
// (parent seed, index) pairs so that any cell or trajectory can be
// simulated in isolation, in any order, on any worker.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return mix64(mix64(parent) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

// A dedicated random stream. The engine (mt19937_64) and the ziggurat normal
// sampler from Boost are both fully specified, so draws are reproducible
// across compilers and standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform01() { return uniform_(engine_); }
  double uniform(double lo, double hi) {
    return boost::random::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  RngStream split(std::uint64_t index) const { return RngStream(derive_seed(seed_hint(), index)); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_hint() const {
    // Copy so that splitting does not advance this stream.
    auto copy = engine_;
    return copy();
  }

  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
  boost::random::uniform_01<double> uniform_;
};

}  // namespace riskpipe
