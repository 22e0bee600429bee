#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace poda {

/// Deterministic xoshiro256** generator with hand-rolled samplers.
///
/// Every distribution is implemented here rather than via <random> so that a
/// given (seed, call sequence) produces the same stream on any platform and
/// standard library. State is four 64-bit words, trivially serializable.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  // Derives an independent stream from (seed, stream). Used to split one root
  // seed per subsystem (noising, dropout, batching, init) and per example.
  Rng(uint64_t seed, uint64_t stream);

  uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n), n >= 1.
  uint64_t uniform_int(uint64_t n);

  bool bernoulli(double p);

  /// Standard normal via the polar method (spare discarded, keeps state flat).
  double normal();
  double normal(double mean, double stddev);

  /// Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape);
  double beta(double alpha, double beta);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace poda
