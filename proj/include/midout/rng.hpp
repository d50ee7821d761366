#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "midout/check.hpp"

namespace midout {

// Counter-based deterministic random stream.
//
// draw i is splitmix64(seed + i * 0x9E3779B97F4A7C15); uniforms scale the
// top 53 bits of the mixed word into [0,1). No platform RNG is involved, so
// the same seed produces the same byte-identical stream on every machine.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Value in [lo, hi).
  double uniform(double lo, double hi) {
    MIDOUT_CHECK(lo < hi, "rng_uniform bounds: lo=" << lo << " hi=" << hi);
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  // Integer in [0, n). Plain modulo draw; the tiny bias is irrelevant here
  // and keeps the mapping trivially portable.
  std::uint64_t below(std::uint64_t n) {
    MIDOUT_CHECK(n > 0, "rng below(0)");
    return next_u64() % n;
  }

  // Integer in [lo, hi] inclusive.
  std::int64_t int_in(std::int64_t lo, std::int64_t hi) {
    MIDOUT_CHECK(lo <= hi, "rng int_in bounds: lo=" << lo << " hi=" << hi);
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; consumes exactly two uniform draws.
  double normal() {
    double u1 = uniform(0.0, 1.0);
    double u2 = uniform(0.0, 1.0);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

  // Index sampled from a probability vector via inverse CDF.
  std::size_t categorical(const std::vector<double>& probs) {
    MIDOUT_CHECK(!probs.empty(), "categorical over empty vector");
    double u = uniform(0.0, 1.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; distinct salts give unrelated streams.
  RngStream derive(std::uint64_t salt) const {
    return RngStream(mix(seed_ ^ mix(salt + 0x632BE59BD9B4E019ULL)));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace midout
