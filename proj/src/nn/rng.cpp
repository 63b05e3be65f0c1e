#include "wkd/nn/rng.hpp"

#include <cmath>
#include <numbers>

namespace wkd::nn {

namespace {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index)
    : key_(mix64(mix64(seed) ^ fnv1a(purpose)) ^ mix64(index + 0x632BE59BD9B4E019ULL)) {}

std::uint64_t Rng::next_u64() {
  // Two rounds so that adjacent (key, counter) pairs decorrelate fully.
  return mix64(mix64(key_ + counter_++ * 0xD1B54A32D192ED03ULL) ^ key_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling on the top of the range keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace wkd::nn
