#include "etx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "etx/error.hpp"
#include "etx/kernels.hpp"

namespace etx {

namespace {

namespace kp = kernels::parallel;
using Index = std::ptrdiff_t;

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(v.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

// Views a [C x H x W] input as a batch of one.
Shape as_batched_image(const Shape& shape, const char* op) {
  if (shape.size() == 4) return shape;
  if (shape.size() == 3) return Shape{1, shape[0], shape[1], shape[2]};
  throw DimensionError(std::string(op) + ": expected [B x C x H x W] or [C x H x W], got " + shape_to_string(shape));
}

double* grad_or_null(const Var& v) { return v.requires_grad() ? v.tensor().grad().data() : nullptr; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  kp::gemm(m, n, k, a.tensor().data(), b.tensor().data(), out.data(), false);

  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](const Tensor& out) {
    const double* gout = out.grad().data();
    if (double* ga = grad_or_null(a)) {
      std::vector<double> bt(n * k);
      kernels::transpose(k, n, b.tensor().data(), bt.data());
      kp::gemm(m, k, n, gout, bt.data(), ga, true);
    }
    if (double* gb = grad_or_null(b)) {
      std::vector<double> at(k * m);
      kernels::transpose(m, k, a.tensor().data(), at.data());
      kp::gemm(k, n, m, at.data(), gout, gb, true);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_features = weight.shape()[0];
  if (weight.shape()[1] != in || bias.shape()[0] != out_features) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(weight.shape()) + " and bias " + shape_to_string(bias.shape()));
  }

  std::vector<double> wt(in * out_features);
  kernels::transpose(out_features, in, weight.tensor().data(), wt.data());
  Tensor out(Shape{batch, out_features});
  const double* b = bias.tensor().data();
  for (std::size_t r = 0; r < batch; ++r) std::copy(b, b + out_features, out.data() + r * out_features);
  kp::gemm(batch, out_features, in, x.tensor().data(), wt.data(), out.data(), true);

  return x.tape().record(std::move(out), {x, weight, bias}, [x, weight, bias, batch, in, out_features](const Tensor& out) {
    const double* gout = out.grad().data();
    if (double* gx = grad_or_null(x)) {
      kp::gemm(batch, in, out_features, gout, weight.tensor().data(), gx, true);
    }
    if (double* gw = grad_or_null(weight)) {
      std::vector<double> gout_t(out_features * batch);
      kernels::transpose(batch, out_features, gout, gout_t.data());
      kp::gemm(out_features, in, batch, gout_t.data(), x.tensor().data(), gw, true);
    }
    if (double* gb = grad_or_null(bias)) {
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out_features; ++o) gb[o] += gout[r * out_features + o];
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto av = a.tensor().values(), bv = b.tensor().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& out) {
    const auto g = out.grad();
    for (const Var& v : {a, b}) {
      if (double* gv = grad_or_null(v)) {
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const auto av = a.tensor().values(), bv = b.tensor().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& out) {
    const auto g = out.grad();
    const auto av = a.tensor().values(), bv = b.tensor().values();
    // a and b may be the same node (x*x); both contributions land in one gradient.
    if (double* ga = grad_or_null(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (double* gb = grad_or_null(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.tensor().values()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [a](const Tensor& out) {
    const double g = out.grad()[0];
    if (double* ga = grad_or_null(a)) {
      for (std::size_t i = 0; i < a.tensor().numel(); ++i) ga[i] += g;
    }
  });
}

Var relu(const Var& a) {
  Tensor out(a.shape());
  const auto av = a.tensor().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return a.tape().record(std::move(out), {a}, [a](const Tensor& out) {
    const auto g = out.grad();
    const auto av = a.tensor().values();
    if (double* ga = grad_or_null(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (av[i] > 0.0) ga[i] += g[i];
      }
    }
  });
}

Var flatten(const Var& a) {
  if (a.shape().size() < 2) throw DimensionError("flatten: expected a batch dimension, got " + shape_to_string(a.shape()));
  const std::size_t batch = a.shape()[0];
  Tensor out(Shape{batch, a.tensor().numel() / batch}, std::vector<double>(a.tensor().values().begin(), a.tensor().values().end()));
  return a.tape().record(std::move(out), {a}, [a](const Tensor& out) {
    const auto g = out.grad();
    if (double* ga = grad_or_null(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
  const Shape in_shape = as_batched_image(input.shape(), "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const Shape& ws = weight.shape();
  if (ws[1] != in_shape[1] || ws[2] != ws[3] || bias.shape()[0] != ws[0]) {
    throw DimensionError("conv2d: weight " + shape_to_string(ws) + " incompatible with input " +
                         shape_to_string(input.shape()) + " / bias " + shape_to_string(bias.shape()));
  }
  kernels::Conv2dGeometry g{in_shape[0], in_shape[1], in_shape[2], in_shape[3], ws[0], ws[2], stride, padding};
  g.validate();

  Shape out_shape{g.batch, g.out_channels, g.out_height(), g.out_width()};
  if (input.shape().size() == 3) out_shape.erase(out_shape.begin());
  Tensor out(out_shape);
  kp::conv2d_forward(g, input.tensor().data(), weight.tensor().data(), bias.tensor().data(), out.data());

  return input.tape().record(std::move(out), {input, weight, bias}, [input, weight, bias, g](const Tensor& out) {
    kp::conv2d_backward(g, input.tensor().data(), weight.tensor().data(), out.grad().data(), grad_or_null(input),
                        grad_or_null(weight), grad_or_null(bias));
  });
}

Var maxpool2d(const Var& input, std::size_t kernel, std::size_t stride) {
  const Shape in_shape = as_batched_image(input.shape(), "maxpool2d");
  kernels::Pool2dGeometry g{in_shape[0], in_shape[1], in_shape[2], in_shape[3], kernel, stride};
  g.validate();

  Shape out_shape{g.batch, g.channels, g.out_height(), g.out_width()};
  if (input.shape().size() == 3) out_shape.erase(out_shape.begin());
  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  kp::maxpool2d_forward(g, input.tensor().data(), out.data(), argmax->data());

  return input.tape().record(std::move(out), {input}, [input, g, argmax](const Tensor& out) {
    if (double* gi = grad_or_null(input)) kp::maxpool2d_backward(g, argmax->data(), out.grad().data(), gi);
  });
}

namespace {

Var batchnorm_impl(const Var& input, const Var& gamma, const Var& beta, const BatchNormRunning& stats,
                   BatchNormRunning* update, double eps) {
  const bool training = update != nullptr;
  const Shape& s = input.shape();
  if (s.size() != 2 && s.size() != 4) {
    throw DimensionError("batchnorm2d: expected [B x C x H x W] or [B x C], got " + shape_to_string(s));
  }
  const std::size_t batch = s[0], channels = s[1];
  const std::size_t spatial = s.size() == 4 ? s[2] * s[3] : 1;
  if (gamma.tensor().numel() != channels || beta.tensor().numel() != channels || stats.mean.size() != channels ||
      stats.var.size() != channels) {
    throw DimensionError("batchnorm2d: per-channel parameters do not match " + std::to_string(channels) + " channels");
  }
  if (training && batch < 2) throw ConfigError("batchnorm2d: training mode needs a batch of at least 2");

  const double count = static_cast<double>(batch * spatial);
  const double* x = input.tensor().data();
  const double* gm = gamma.tensor().data();
  const double* bt = beta.tensor().data();

  auto mean = std::make_shared<std::vector<double>>(channels);
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  auto xhat = std::make_shared<std::vector<double>>(input.tensor().numel());
  Tensor out(s);

#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < static_cast<Index>(channels); ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    double mu, var;
    if (training) {
      double total = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) total += p[i];
      }
      mu = total / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / count;
      update->mean[c] = (1.0 - update->momentum) * update->mean[c] + update->momentum * mu;
      update->var[c] = (1.0 - update->momentum) * update->var[c] + update->momentum * sq / (count - 1.0);
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean)[c] = mu;
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double h = (x[off + i] - mu) * is;
        (*xhat)[off + i] = h;
        out[off + i] = gm[c] * h + bt[c];
      }
    }
  }

  return input.tape().record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, training, batch, channels, spatial, count, inv_std, xhat](const Tensor& out) {
        const double* gout = out.grad().data();
        double* gx = grad_or_null(input);
        double* gg = grad_or_null(gamma);
        double* gb = grad_or_null(beta);
        const double* gm = gamma.tensor().data();
#pragma omp parallel for schedule(static)
        for (Index ch = 0; ch < static_cast<Index>(channels); ++ch) {
          const auto c = static_cast<std::size_t>(ch);
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sum_g += gout[off + i];
              sum_gx += gout[off + i] * (*xhat)[off + i];
            }
          }
          if (gg) gg[c] += sum_gx;
          if (gb) gb[c] += sum_g;
          if (!gx) continue;
          const double scale = gm[c] * (*inv_std)[c];
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              if (training) {
                gx[off + i] += scale * (gout[off + i] - sum_g / count - (*xhat)[off + i] * sum_gx / count);
              } else {
                gx[off + i] += scale * gout[off + i];
              }
            }
          }
        }
      });
}

}  // namespace

Var batchnorm2d_train(const Var& input, const Var& gamma, const Var& beta, BatchNormRunning& running, double eps) {
  return batchnorm_impl(input, gamma, beta, running, &running, eps);
}

Var batchnorm2d_eval(const Var& input, const Var& gamma, const Var& beta, const BatchNormRunning& running,
                     double eps) {
  return batchnorm_impl(input, gamma, beta, running, nullptr, eps);
}

Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, BatchNormRunning& running, bool training,
                double eps) {
  return training ? batchnorm2d_train(input, gamma, beta, running, eps)
                  : batchnorm2d_eval(input, gamma, beta, running, eps);
}

Var log_softmax_nll(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "log_softmax_nll");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw DimensionError("log_softmax_nll: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("log_softmax_nll: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const double* z = logits.tensor().data();
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const double* row = z + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - peak);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[r * classes + c] = std::exp(row[c] - peak - log_denom);
    total -= row[labels[r]] - peak - log_denom;
  }
  std::vector<int> kept(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor::scalar(total / static_cast<double>(batch)), {logits},
      [logits, probs, kept = std::move(kept), batch, classes](const Tensor& out) {
        double* gz = grad_or_null(logits);
        if (!gz) return;
        const double scale = out.grad()[0] / static_cast<double>(batch);
        // The label entry is -(sum of the other probabilities) rather than p - 1, which
        // keeps it nonzero when the label probability rounds to 1.
        for (std::size_t r = 0; r < batch; ++r) {
          const double* p = probs->data() + r * classes;
          const auto label = static_cast<std::size_t>(kept[r]);
          double rest = 0.0;
          for (std::size_t c = 0; c < classes; ++c) {
            if (c == label) continue;
            rest += p[c];
            gz[r * classes + c] += scale * p[c];
          }
          gz[r * classes + label] -= scale * rest;
        }
      });
}

}  // namespace etx
