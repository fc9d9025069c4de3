#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen {

using Rng = std::mt19937_64;

// Independent stream keyed by a tuple of integers, e.g. (seed, step, slot).
// Used wherever a draw must be reproducible without carrying RNG state.
inline Rng make_rng(std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  words.reserve(key.size() * 2);
  for (std::uint64_t k : key) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline void fill_normal(Tensor& t, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<real>(dist(rng));
}

inline Tensor randn(Shape shape, Rng& rng) {
  Tensor t(shape);
  fill_normal(t, rng);
  return t;
}

// 64-bit FNV-1a; stable across platforms, used for ids and config hashes.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace scenegen
