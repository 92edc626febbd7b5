#include "etx/optim.hpp"

#include <cmath>

#include "etx/error.hpp"

namespace etx {

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "sgd_momentum" || name == "momentum") return OptimizerKind::sgd_momentum;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

namespace {

std::span<const double> grad_of(const Tensor* param) {
  if (!param->has_grad()) throw UsageError("optimizer step on a parameter without a gradient");
  return param->grad();
}

// Lazily sizes the moment buffers on first use; afterwards they must keep matching.
void ensure_buffers(std::vector<std::vector<double>>& buffers, std::span<Tensor* const> params) {
  if (buffers.empty()) {
    for (const Tensor* p : params) buffers.emplace_back(p->numel(), 0.0);
    return;
  }
  if (buffers.size() != params.size()) throw DimensionError("optimizer state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buffers[i].size() != params[i]->numel()) throw DimensionError("optimizer buffer does not mirror its parameter");
  }
}

void check_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
}

}  // namespace

std::vector<double> OptimizerState::raw_first_moment(std::size_t param) const {
  std::vector<double> out = first.at(param);
  if (config.kind == OptimizerKind::adam) {
    const double bias = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    for (double& v : out) v *= bias;
  }
  return out;
}

std::vector<double> OptimizerState::raw_second_moment(std::size_t param) const {
  std::vector<double> out = second.at(param);
  if (config.kind == OptimizerKind::adam) {
    const double bias = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (double& v : out) v *= bias;
  }
  return out;
}

void sgd_step(std::span<Tensor* const> params, double lr) {
  check_lr(lr);
  for (Tensor* p : params) {
    const auto g = grad_of(p);
    auto v = p->values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

void sgd_momentum_step(std::span<Tensor* const> params, OptimizerState& state) {
  check_lr(state.config.lr);
  ensure_buffers(state.first, params);
  const double m = state.config.momentum, lr = state.config.lr;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = grad_of(params[k]);
    auto v = params[k]->values();
    auto& velocity = state.first[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      velocity[i] = m * velocity[i] + g[i];
      v[i] -= lr * velocity[i];
    }
  }
  ++state.t;
}

void rmsprop_step(std::span<Tensor* const> params, OptimizerState& state) {
  check_lr(state.config.lr);
  ensure_buffers(state.second, params);
  const double alpha = state.config.alpha, lr = state.config.lr, eps = state.config.eps;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = grad_of(params[k]);
    auto v = params[k]->values();
    auto& sq = state.second[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      sq[i] = alpha * sq[i] + (1.0 - alpha) * g[i] * g[i];
      v[i] -= lr * g[i] / std::sqrt(sq[i] + eps);
    }
  }
  ++state.t;
}

void adam_step(std::span<Tensor* const> params, OptimizerState& state) {
  check_lr(state.config.lr);
  ensure_buffers(state.first, params);
  ensure_buffers(state.second, params);
  const auto& c = state.config;
  const double next_t = static_cast<double>(state.t + 1);
  const double rate1 = (1.0 - c.beta1) / (1.0 - std::pow(c.beta1, next_t));
  const double rate2 = (1.0 - c.beta2) / (1.0 - std::pow(c.beta2, next_t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = grad_of(params[k]);
    auto v = params[k]->values();
    auto& vc = state.first[k];
    auto& sc = state.second[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      vc[i] += (g[i] - vc[i]) * rate1;
      sc[i] += (g[i] * g[i] - sc[i]) * rate2;
      // eps sits inside the square root.
      v[i] -= c.lr * vc[i] / std::sqrt(sc[i] + c.eps);
    }
  }
  ++state.t;
}

void optimizer_step(std::span<Tensor* const> params, OptimizerState& state) {
  switch (state.config.kind) {
    case OptimizerKind::sgd:
      sgd_step(params, state.config.lr);
      ++state.t;
      break;
    case OptimizerKind::sgd_momentum: sgd_momentum_step(params, state); break;
    case OptimizerKind::rmsprop: rmsprop_step(params, state); break;
    case OptimizerKind::adam: adam_step(params, state); break;
  }
}

}  // namespace etx
