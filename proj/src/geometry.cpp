#include "etx/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "etx/error.hpp"

namespace etx {

namespace {

double degrees(double radians) { return radians * 180.0 / std::numbers::pi; }

}  // namespace

double expected_angle(double n, double p) {
  if (!(n >= 1.0)) throw DomainError("dimension must be at least 1");
  if (!(p >= 1.0)) throw DomainError("norm order must be at least 1");
  return degrees(std::acos(std::pow(1.0 / n, 1.0 / p)));
}

double cos_variance(double n) {
  if (!(n >= 1.0)) throw DomainError("dimension must be at least 1");
  return 1.0 / n;
}

MarkovBound markov_angle_bound(double t, double n) {
  if (!(n >= 1.0)) throw DomainError("dimension must be at least 1");
  if (!(t >= 1.0)) throw DomainError("Markov factor t must be at least 1");
  if (t > n) throw DomainError("Markov factor t exceeds the dimension (cosine above 1)");
  return {degrees(std::acos(std::sqrt(t / n))), 1.0 / t};
}

std::vector<double> sample_unit_vector(std::size_t n, Rng& rng) {
  if (n == 0) throw DomainError("dimension must be at least 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  double ss = 0.0;
  do {
    ss = 0.0;
    for (double& x : v) {
      x = normal(rng);
      ss += x * x;
    }
  } while (ss == 0.0);
  const double norm = std::sqrt(ss);
  for (double& x : v) x /= norm;
  return v;
}

AngleStat summarize_angles(std::span<const double> angles) {
  AngleStat s;
  if (angles.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean = s.std = s.min = s.rms_cos_angle = nan;
    return s;
  }
  double mean = 0.0, m2 = 0.0, lo = angles.front(), cos2 = 0.0;
  std::size_t k = 0;
  for (double a : angles) {
    ++k;
    const double d = a - mean;
    mean += d / static_cast<double>(k);
    m2 += d * (a - mean);
    lo = std::min(lo, a);
    const double c = std::cos(a * std::numbers::pi / 180.0);
    cos2 += (c * c - cos2) / static_cast<double>(k);
  }
  s.rms_cos_angle = degrees(std::acos(std::min(1.0, std::sqrt(cos2))));
  s.mean = mean;
  s.std = std::sqrt(std::max(0.0, m2 / static_cast<double>(k)));
  s.min = lo;
  s.count = k;
  return s;
}

double folded_angle_from_cos(double c) {
  const double a = degrees(std::acos(std::clamp(c, -1.0, 1.0)));
  return a <= 90.0 ? a : 180.0 - a;
}

std::vector<double> sample_pair_cosines(std::size_t n, std::size_t pairs, std::uint64_t seed) {
  if (n == 0) throw DomainError("dimension must be at least 1");
  std::vector<double> out(pairs);
  const auto chunks = static_cast<std::int64_t>((pairs + kMonteCarloChunk - 1) / kMonteCarloChunk);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t c = 0; c < chunks; ++c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    const std::size_t begin = static_cast<std::size_t>(c) * kMonteCarloChunk;
    const std::size_t end = std::min(pairs, begin + kMonteCarloChunk);
    for (std::size_t i = begin; i < end; ++i) {
      const auto u = sample_unit_vector(n, rng);
      const auto v = sample_unit_vector(n, rng);
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += u[k] * v[k];
      out[i] = std::clamp(dot, -1.0, 1.0);
    }
  }
  return out;
}

std::vector<double> sample_folded_angles(std::size_t n, std::size_t pairs, std::uint64_t seed) {
  auto out = sample_pair_cosines(n, pairs, seed);
  for (double& c : out) c = folded_angle_from_cos(c);
  return out;
}

AngleStat empirical_angle_stats(std::size_t n, std::size_t pairs, std::uint64_t seed) {
  const auto angles = sample_folded_angles(n, pairs, seed);
  return summarize_angles(angles);
}

double fraction_at_or_below(std::span<const double> angles, double threshold_deg) {
  if (angles.empty()) return 0.0;
  const auto hits = std::count_if(angles.begin(), angles.end(), [&](double a) { return a <= threshold_deg; });
  return static_cast<double>(hits) / static_cast<double>(angles.size());
}

}  // namespace etx
