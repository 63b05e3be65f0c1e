#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace wkd::nn {

/// FNV-1a, used to turn stream purposes and tokens into keys.
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ULL);

/// Counter-based generator: the k-th draw is a pure function of
/// (seed, purpose, index, k). Streams with different purposes or indices are
/// independent, so init, dropout, noise and shuffling never share state and a
/// run is reproducible from its seed alone.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  /// Standard normal via Box-Muller (one draw consumes two uniforms).
  double normal();
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace wkd::nn
