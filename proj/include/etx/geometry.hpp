#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "etx/seeding.hpp"

namespace etx {

// arccos((1/n)^(1/p)) in degrees: the typical folded angle between two independent
// random unit vectors of R^n under the l_p norm. Throws DomainError for n < 1 or p < 1.
double expected_angle(double n, double p = 2.0);

// Variance 1/n of one coordinate of a uniform random unit vector in R^n (n >= 1).
double cos_variance(double n);

struct MarkovBound {
  double angle_deg;    // arccos(sqrt(t / n))
  double probability;  // 1 / t
};

// Markov's inequality on cos^2: P(folded angle <= angle_deg) <= probability.
// Throws DomainError unless 1 <= t <= n.
MarkovBound markov_angle_bound(double t, double n);

// Standard-normal coordinates scaled to unit l2 norm: uniform on the sphere.
std::vector<double> sample_unit_vector(std::size_t n, Rng& rng);

/// Folded-angle summary in degrees; std is the population standard deviation.
/// rms_cos_angle = arccos(sqrt(mean cos^2)) is the statistic expected_angle(n, 2)
/// predicts; the arithmetic mean of the angles sits above it (Jensen gap), e.g.
/// 89.17 vs 88.97 degrees at n = 3072.
struct AngleStat {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  std::size_t count = 0;
  double rms_cos_angle = 0.0;
};

// Welford summary in input order. An empty input gives count 0 and NaN fields.
// rms_cos_angle is derived from the angles themselves.
AngleStat summarize_angles(std::span<const double> angles);

// Folded angle in degrees of a cosine (clamped to [-1, 1]).
double folded_angle_from_cos(double c);

// Cosines of `pairs` independent pairs of random unit vectors in R^n.
// Pairs are generated in fixed chunks of kMonteCarloChunk, chunk c from seed
// derive_seed(seed, c), so the result does not depend on the thread count.
inline constexpr std::size_t kMonteCarloChunk = 1024;
std::vector<double> sample_pair_cosines(std::size_t n, std::size_t pairs, std::uint64_t seed);
std::vector<double> sample_folded_angles(std::size_t n, std::size_t pairs, std::uint64_t seed);

AngleStat empirical_angle_stats(std::size_t n, std::size_t pairs, std::uint64_t seed);

// Fraction of `angles` at or below `threshold_deg`.
double fraction_at_or_below(std::span<const double> angles, double threshold_deg);

}  // namespace etx
