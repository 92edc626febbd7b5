#include <string>

#include "etx/error.hpp"
#include "etx/kernels.hpp"

namespace etx::kernels {

void Conv2dGeometry::validate() const {
  if (batch == 0 || in_channels == 0 || out_channels == 0 || height == 0 || width == 0) {
    throw ConfigError("conv2d: extents must be positive");
  }
  if (kernel == 0 || stride == 0) throw ConfigError("conv2d: kernel and stride must be positive");
  if (height + 2 * padding < kernel || width + 2 * padding < kernel) {
    throw ConfigError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                      std::to_string(height + 2 * padding) + "x" + std::to_string(width + 2 * padding));
  }
}

void Pool2dGeometry::validate() const {
  if (batch == 0 || channels == 0 || height == 0 || width == 0) throw ConfigError("maxpool2d: extents must be positive");
  if (kernel == 0 || stride == 0) throw ConfigError("maxpool2d: kernel and stride must be positive");
  if (height < kernel || width < kernel) {
    throw ConfigError("maxpool2d: window " + std::to_string(kernel) + " larger than input " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = r0 + kBlock < rows ? r0 + kBlock : rows;
      const std::size_t c1 = c0 + kBlock < cols ? c0 + kBlock : cols;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

// Padded taps contribute an explicit zero product so that the summation sequence
// matches the im2col formulation term for term.
void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, const double* bias,
                    double* output) {
  g.validate();
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double sum = bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < g.kernel; ++ky) {
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                const double wv = weight[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
                double xv = 0.0;
                if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                  xv = input[((b * g.in_channels + ci) * g.height + static_cast<std::size_t>(iy)) * g.width +
                             static_cast<std::size_t>(ix)];
                }
                sum += wv * xv;
              }
            }
          }
          output[((b * g.out_channels + co) * oh + oy) * ow + ox] = sum;
        }
      }
    }
  }
}

void conv2d_backward(const Conv2dGeometry& g, const double* input, const double* weight, const double* grad_output,
                     double* grad_input, double* grad_weight, double* grad_bias) {
  g.validate();
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = grad_output[((b * g.out_channels + co) * oh + oy) * ow + ox];
          if (grad_bias) grad_bias[co] += go;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < g.kernel; ++ky) {
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                const std::size_t in_idx =
                    ((b * g.in_channels + ci) * g.height + static_cast<std::size_t>(iy)) * g.width +
                    static_cast<std::size_t>(ix);
                const std::size_t w_idx = ((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx;
                if (grad_weight) grad_weight[w_idx] += input[in_idx] * go;
              }
            }
          }
        }
      }
    }
  }
  if (!grad_input) return;
  // Per tap and output position, the sum over output channels is formed first, then added.
  const std::size_t taps = g.kernel * g.kernel;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t tap = 0; tap < taps; ++tap) {
        const std::size_t ky = tap / g.kernel, kx = tap % g.kernel;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= h) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= w) continue;
            double acc = 0.0;
            for (std::size_t co = 0; co < g.out_channels; ++co) {
              acc += weight[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx] *
                     grad_output[((b * g.out_channels + co) * oh + oy) * ow + ox];
            }
            grad_input[((b * g.in_channels + ci) * g.height + static_cast<std::size_t>(iy)) * g.width +
                       static_cast<std::size_t>(ix)] += acc;
          }
        }
      }
    }
  }
}

void maxpool2d_forward(const Pool2dGeometry& g, const double* input, double* output, std::size_t* argmax) {
  g.validate();
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t plane = 0; plane < g.batch * g.channels; ++plane) {
    const std::size_t base = plane * g.height * g.width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (oy * g.stride) * g.width + ox * g.stride;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::size_t idx = base + (oy * g.stride + ky) * g.width + ox * g.stride + kx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t out_idx = (plane * oh + oy) * ow + ox;
        output[out_idx] = input[best];
        if (argmax) argmax[out_idx] = best;
      }
    }
  }
}

void maxpool2d_backward(const Pool2dGeometry& g, const std::size_t* argmax, const double* grad_output,
                        double* grad_input) {
  const std::size_t count = g.batch * g.channels * g.out_height() * g.out_width();
  for (std::size_t i = 0; i < count; ++i) grad_input[argmax[i]] += grad_output[i];
}

}  // namespace reference
}  // namespace etx::kernels
