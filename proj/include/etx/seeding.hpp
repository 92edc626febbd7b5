#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace etx {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Derives the k-th seed of a run from its base seed: h(base, k) = mix64(mix64(base) + k).
// Runs use k = 1 (model 1), 2 (model 2), 3 (shuffle 1), 4 (shuffle 2), 5 (eval pool).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k);

// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
double uniform01(Rng& rng);

// Uniform integer in [0, bound) by rejection; stable across standard libraries.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);

// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace etx
