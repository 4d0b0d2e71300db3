#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace a2snas {

/// SplitMix64 generator. Every draw is a pure function of (seed, draw index),
/// so sequences are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  /// Independent sub-stream keyed by a name, e.g. a parameter path.
  static Rng stream(std::uint64_t seed, std::string_view name);
  /// Sub-stream keyed by a name and an index (epoch, block, ...).
  static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal draw (Box-Muller, one value per call).
  double normal();

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t state) { state_ = state; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

/// 64-bit FNV-1a hash used to key named streams.
std::uint64_t fnv1a64(std::string_view text);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace a2snas
