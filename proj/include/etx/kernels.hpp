#pragma once

// Numeric kernels behind the autodiff ops.
//
// Every kernel exists twice: `reference` is the plain serial loop nest that
// defines the result, `parallel` is the OpenMP version the ops actually call.
// Parallel kernels partition work by output element and keep the reference's
// summation order per element, so both produce identical bits regardless of
// thread count. Backward kernels accumulate (+=) into their gradient outputs.

#include <cstddef>

namespace etx::kernels {

struct Conv2dGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Throws ConfigError when the output extent would be non-positive.
  void validate() const;
  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel * kernel; }
};

struct Pool2dGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 2;
  std::size_t stride = 2;

  void validate() const;
  std::size_t out_height() const { return (height - kernel) / stride + 1; }
  std::size_t out_width() const { return (width - kernel) / stride + 1; }
};

// dst[cols x rows] = transpose(src[rows x cols])
void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

namespace reference {

// C[m x n] = A[m x k] * B[k x n], or C += A * B when accumulate is set.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate);

// Cross-correlation. bias may be null.
void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, const double* bias,
                    double* output);
// Any of grad_input / grad_weight / grad_bias may be null.
void conv2d_backward(const Conv2dGeometry& g, const double* input, const double* weight, const double* grad_output,
                     double* grad_input, double* grad_weight, double* grad_bias);

// argmax receives, per output element, the flat input index of the window maximum
// (first in row-major window order on ties).
void maxpool2d_forward(const Pool2dGeometry& g, const double* input, double* output, std::size_t* argmax);
void maxpool2d_backward(const Pool2dGeometry& g, const std::size_t* argmax, const double* grad_output,
                        double* grad_input);

}  // namespace reference

namespace parallel {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate);

void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, const double* bias,
                    double* output);
void conv2d_backward(const Conv2dGeometry& g, const double* input, const double* weight, const double* grad_output,
                     double* grad_input, double* grad_weight, double* grad_bias);

void maxpool2d_forward(const Pool2dGeometry& g, const double* input, double* output, std::size_t* argmax);
void maxpool2d_backward(const Pool2dGeometry& g, const std::size_t* argmax, const double* grad_output,
                        double* grad_input);

}  // namespace parallel

}  // namespace etx::kernels
