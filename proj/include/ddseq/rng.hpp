#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

namespace ddseq {

/// Domain tags so different consumers of the same (seed, position, step)
/// never share a stream.
enum class Stream : std::uint64_t {
  Corrupt = 1,
  TimeDraw = 2,
  MlmMask = 3,
  Posterior = 4,
  Sampler = 5,
  Gumbel = 6,
  Init = 7,
  Dropout = 8,
  Batch = 9,
  Corpus = 10,
  Condition = 11,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the state is a key derived from a tuple of ids
/// plus a draw counter, so any stream can be reconstructed without replaying
/// others. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, Stream stream = Stream::Corrupt, std::uint64_t a = 0, std::uint64_t b = 0,
                      std::uint64_t c = 0)
      : key_(mix(mix(mix(mix(splitmix64(seed), static_cast<std::uint64_t>(stream)), a), b), c)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(key_ + 0xD1B54A32D192ED03ULL * ++counter_); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  /// Uniform on (0, 1].
  double uniform_open_closed() { return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Index in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  /// Draws an index from unnormalized non-negative weights.
  template <typename T>
  std::size_t categorical(std::span<const T> weights) {
    double total = 0.0;
    for (T w : weights) total += static_cast<double>(w);
    double u = uniform() * total;
    std::size_t last = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0) continue;
      last = i;
      u -= static_cast<double>(weights[i]);
      if (u < 0.0) return i;
    }
    return last;
  }

  /// Standard Gumbel variate -log(-log U) with U on (0, 1].
  double gumbel() {
    const double u = uniform_open_closed();
    if (u >= 1.0) return -std::log(-std::log(1.0 - 0x1.0p-54));
    return -std::log(-std::log(u));
  }

  double normal() {
    // Box-Muller, one variate per call.
    const double u1 = uniform_open_closed();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ (v + 0x632BE59BD9B4E019ULL)); }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Derives a child seed, e.g. one per sequence in a batch.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ 0x5851F42D4C957F2DULL) + a * 0x2545F4914F6CDD1DULL + b);
}

}  // namespace ddseq
