#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace upmix {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named sub-stream, e.g.
/// `derive_seed(master, "segment", {song, index})`. Stable across runs and
/// platforms (splitmix64 over an FNV-1a hash of the tag).
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::initializer_list<std::uint64_t> indices = {});

inline Rng make_rng(std::uint64_t master, std::string_view tag, std::initializer_list<std::uint64_t> indices = {}) {
  return Rng(derive_seed(master, tag, indices));
}

/// Standard normal draw via Box-Muller on 53-bit uniforms; unlike
/// std::normal_distribution its output does not depend on the standard library.
double standard_normal(Rng& rng);
double uniform01(Rng& rng);

/// Uniform integer in [0, n) (n > 0).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Fisher-Yates shuffle with a fixed draw sequence.
template <class T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace upmix
