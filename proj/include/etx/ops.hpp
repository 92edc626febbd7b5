#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "etx/autograd.hpp"

namespace etx {

// a[m x k] * b[k x n]
Var matmul(const Var& a, const Var& b);

// x[B x in] * weight[out x in]^T + bias[out]. Weight rows are the per-unit weight vectors.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var sum(const Var& a);
Var relu(const Var& a);

// [B x rest...] -> [B x prod(rest)]
Var flatten(const Var& a);

// input [B x C x H x W] or [C x H x W]; weight [Cout x Cin x k x k]; bias [Cout].
Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding);

// input [B x C x H x W] or [C x H x W]. No padding.
Var maxpool2d(const Var& input, std::size_t kernel, std::size_t stride);

struct BatchNormRunning {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;

  explicit BatchNormRunning(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

inline constexpr double kBatchNormEps = 1e-5;

// input [B x C x H x W] or [B x C].
// Training: normalizes with biased batch statistics and folds them into `running`
// (unbiased variance, weight running.momentum). Needs B >= 2.
Var batchnorm2d_train(const Var& input, const Var& gamma, const Var& beta, BatchNormRunning& running,
                      double eps = kBatchNormEps);
// Evaluation: normalizes with the running statistics.
Var batchnorm2d_eval(const Var& input, const Var& gamma, const Var& beta, const BatchNormRunning& running,
                     double eps = kBatchNormEps);
Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, BatchNormRunning& running, bool training,
                double eps = kBatchNormEps);

// Mean over the batch of -log softmax(logits)[label]. logits [B x C], labels in [0, C).
Var log_softmax_nll(const Var& logits, std::span<const int> labels);

}  // namespace etx
