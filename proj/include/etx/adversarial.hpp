#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "etx/data.hpp"
#include "etx/models.hpp"

namespace etx {

enum class AttackMethod { grad, sign };

std::string_view to_string(AttackMethod method);
// "grad" or "sign"; throws ConfigError otherwise.
AttackMethod parse_attack_method(std::string_view name);

/// Adversarial direction of one sample under one model, flattened over the input space.
/// grad: unit l2 norm. sign: entries in {-1, 0, +1}. `degenerate` marks an exactly zero
/// input gradient, in which case `values` is all zeros.
struct Direction {
  std::vector<double> values;
  AttackMethod method = AttackMethod::grad;
  bool degenerate = false;
  int model_id = 0;
  std::size_t sample_id = 0;
};

// Gradient of the NLL at label y with respect to the input sample x (flattened),
// with the network in evaluation mode.
std::vector<double> input_gradient(const Network& net, std::span<const double> x, int y);

// Per-sample input gradients of a [B x input...] batch, one row of numel/B values each.
// Evaluation mode keeps samples independent, so each row equals input_gradient of that sample
// up to rounding.
std::vector<std::vector<double>> input_gradients(const Network& net, const Tensor& batch, std::span<const int> labels);

Direction direction_from_gradient(std::span<const double> gradient, AttackMethod method);

Direction adversarial_direction(const Network& net, std::span<const double> x, int y, AttackMethod method);

// Directions for dataset samples `indices`, evaluated in chunks.
std::vector<Direction> adversarial_directions(const Network& net, const Dataset& dataset,
                                              std::span<const std::size_t> indices, AttackMethod method,
                                              int model_id = 0, std::size_t chunk = 100);

// Degrees in [0, 180]. Throws DomainError on a zero vector or mismatched lengths.
double angle_between(std::span<const double> u, std::span<const double> v);

// a for a <= 90, else 180 - a. Throws DomainError outside [0, 180].
double fold_angle(double degrees);

inline double folded_angle_between(std::span<const double> u, std::span<const double> v) {
  return fold_angle(angle_between(u, v));
}

}  // namespace etx
