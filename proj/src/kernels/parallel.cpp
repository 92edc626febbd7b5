#include <omp.h>

#include <algorithm>
#include <cstddef>
#include <vector>

#include "etx/kernels.hpp"

namespace etx::kernels::parallel {

namespace {

constexpr std::size_t kBlockK = 128;
constexpr std::size_t kBlockN = 512;

using Index = std::ptrdiff_t;

// Unpacks the receptive fields of one sample into a [patch x (oh*ow)] matrix.
void im2col(const Conv2dGeometry& g, const double* sample, double* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), spatial = oh * ow;
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < static_cast<Index>(g.patch_size()); ++row) {
    const auto r = static_cast<std::size_t>(row);
    const std::size_t ci = r / (g.kernel * g.kernel);
    const std::size_t ky = (r / g.kernel) % g.kernel;
    const std::size_t kx = r % g.kernel;
    double* dst = cols + r * spatial;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
        dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? sample[(ci * g.height + static_cast<std::size_t>(iy)) * g.width +
                                         static_cast<std::size_t>(ix)]
                                : 0.0;
      }
    }
  }
}

// Scatter-adds a [patch x (oh*ow)] matrix back onto one sample's gradient.
// Parallel over input channels: every patch row of a channel writes only that channel.
void col2im_add(const Conv2dGeometry& g, const double* cols, double* sample_grad) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), spatial = oh * ow;
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const std::size_t taps = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (Index channel = 0; channel < static_cast<Index>(g.in_channels); ++channel) {
    const auto ci = static_cast<std::size_t>(channel);
    for (std::size_t tap = 0; tap < taps; ++tap) {
      const std::size_t ky = tap / g.kernel, kx = tap % g.kernel;
      const double* src = cols + (ci * taps + tap) * spatial;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
        if (iy < 0 || iy >= h) continue;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
          if (ix < 0 || ix >= w) continue;
          sample_grad[(ci * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
              src[oy * ow + ox];
        }
      }
    }
  }
}

}  // namespace

// Blocked over (n, k) so a B panel stays cache resident while every row of A
// streams past it. Each C element still sums its k terms in ascending order.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t j1 = std::min(n, j0 + kBlockN);
    for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
      const std::size_t p1 = std::min(k, p0 + kBlockK);
#pragma omp parallel for schedule(static)
      for (Index row = 0; row < static_cast<Index>(m); ++row) {
        const auto i = static_cast<std::size_t>(row);
        double* __restrict crow = c + i * n;
        const double* __restrict arow = a + i * k;
        for (std::size_t p = p0; p < p1; ++p) {
          const double av = arow[p];
          const double* __restrict brow = b + p * n;
          for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, const double* bias,
                    double* output) {
  g.validate();
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  std::vector<double> cols(patch * spatial);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, input + b * g.in_channels * g.height * g.width, cols.data());
    double* out = output + b * g.out_channels * spatial;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      std::fill(out + co * spatial, out + (co + 1) * spatial, bias ? bias[co] : 0.0);
    }
    gemm(g.out_channels, spatial, patch, weight, cols.data(), out, true);
  }
}

void conv2d_backward(const Conv2dGeometry& g, const double* input, const double* weight, const double* grad_output,
                     double* grad_input, double* grad_weight, double* grad_bias) {
  g.validate();
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  const std::size_t in_size = g.in_channels * g.height * g.width;

  if (grad_bias) {
#pragma omp parallel for schedule(static)
    for (Index channel = 0; channel < static_cast<Index>(g.out_channels); ++channel) {
      const auto co = static_cast<std::size_t>(channel);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const double* go = grad_output + (b * g.out_channels + co) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) grad_bias[co] += go[s];
      }
    }
  }

  std::vector<double> cols(patch * spatial);
  std::vector<double> cols_t;
  std::vector<double> weight_t;
  if (grad_weight) cols_t.resize(spatial * patch);
  if (grad_input) {
    weight_t.resize(patch * g.out_channels);
    transpose(g.out_channels, patch, weight, weight_t.data());
  }

  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* go = grad_output + b * g.out_channels * spatial;
    if (grad_weight) {
      im2col(g, input + b * in_size, cols.data());
      transpose(patch, spatial, cols.data(), cols_t.data());
      gemm(g.out_channels, patch, spatial, go, cols_t.data(), grad_weight, true);
    }
    if (grad_input) {
      gemm(patch, spatial, g.out_channels, weight_t.data(), go, cols.data(), false);
      col2im_add(g, cols.data(), grad_input + b * in_size);
    }
  }
}

void maxpool2d_forward(const Pool2dGeometry& g, const double* input, double* output, std::size_t* argmax) {
  g.validate();
  const std::size_t oh = g.out_height(), ow = g.out_width();
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < static_cast<Index>(g.batch * g.channels); ++p) {
    const auto plane = static_cast<std::size_t>(p);
    const std::size_t base = plane * g.height * g.width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t corner = base + (oy * g.stride) * g.width + ox * g.stride;
        std::size_t best = corner;
        double best_value = input[corner];
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::size_t row = corner + ky * g.width;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            if (input[row + kx] > best_value) {
              best_value = input[row + kx];
              best = row + kx;
            }
          }
        }
        const std::size_t out_idx = (plane * oh + oy) * ow + ox;
        output[out_idx] = best_value;
        if (argmax) argmax[out_idx] = best;
      }
    }
  }
}

void maxpool2d_backward(const Pool2dGeometry& g, const std::size_t* argmax, const double* grad_output,
                        double* grad_input) {
  const std::size_t per_plane = g.out_height() * g.out_width();
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < static_cast<Index>(g.batch * g.channels); ++p) {
    const std::size_t first = static_cast<std::size_t>(p) * per_plane;
    for (std::size_t i = first; i < first + per_plane; ++i) grad_input[argmax[i]] += grad_output[i];
  }
}

}  // namespace etx::kernels::parallel
