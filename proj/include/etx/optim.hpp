#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "etx/tensor.hpp"

namespace etx {

enum class OptimizerKind { sgd, sgd_momentum, rmsprop, adam };

std::string_view to_string(OptimizerKind kind);
// Accepts "sgd", "momentum" / "sgd_momentum", "rmsprop", "adam". Throws ConfigError otherwise.
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // heavy-ball coefficient for sgd_momentum
  double alpha = 0.99;    // RMSprop smoothing
};

/// Per-parameter moment buffers plus the step counter.
///
/// For Adam the buffers hold the bias-corrected moments V_C and S_C, advanced by
///   V_C <- V_C + (g - V_C) * (1 - beta1) / (1 - beta1^t)
/// which is algebraically the textbook pair V <- beta1 V + (1 - beta1) g, V_C = V / (1 - beta1^t),
/// but makes the first step return V_C = g and S_C = g^2 bit-exactly. Raw moments are
/// recovered by raw_first_moment / raw_second_moment.
///
/// sgd_momentum keeps its velocity in `first`; rmsprop keeps its running square in `second`.
struct OptimizerState {
  OptimizerConfig config;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t t = 0;

  explicit OptimizerState(OptimizerConfig cfg) : config(cfg) {}

  std::vector<double> raw_first_moment(std::size_t param) const;
  std::vector<double> raw_second_moment(std::size_t param) const;
};

// Each function reads gradients from the parameters' grad slots and throws
// UsageError when one is missing, DimensionError when buffers do not match.
// The stateful steps advance state.t.
void sgd_step(std::span<Tensor* const> params, double lr);
void sgd_momentum_step(std::span<Tensor* const> params, OptimizerState& state);
void rmsprop_step(std::span<Tensor* const> params, OptimizerState& state);
void adam_step(std::span<Tensor* const> params, OptimizerState& state);

// Dispatches on state.config.kind; every kind advances state.t by one.
void optimizer_step(std::span<Tensor* const> params, OptimizerState& state);

}  // namespace etx
