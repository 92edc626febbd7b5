#include <gtest/gtest.h>

#include <cstring>
#include <omp.h>

#include "etx/error.hpp"
#include "etx/kernels.hpp"
#include "test_util.hpp"

namespace {

using namespace etx::kernels;
using etx::testing::random_values;

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

TEST(Gemm, HandComputedProduct) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
  const std::vector<double> b{7, 8, 9, 10, 11, 12};  // 3x2
  std::vector<double> c(4, 100.0);
  reference::gemm(2, 2, 3, a.data(), b.data(), c.data(), false);
  EXPECT_EQ(c, (std::vector<double>{58, 64, 139, 154}));
  reference::gemm(2, 2, 3, a.data(), b.data(), c.data(), true);
  EXPECT_EQ(c, (std::vector<double>{116, 128, 278, 308}));
}

class GemmShapes : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(GemmShapes, ParallelMatchesReferenceBitForBit) {
  const auto [m, n, k] = GetParam();
  const auto a = random_values(m * k, 1), b = random_values(k * n, 2), init = random_values(m * n, 3);
  for (bool accumulate : {false, true}) {
    std::vector<double> ref = init, par = init;
    reference::gemm(m, n, k, a.data(), b.data(), ref.data(), accumulate);
    parallel::gemm(m, n, k, a.data(), b.data(), par.data(), accumulate);
    EXPECT_TRUE(same_bits(ref, par)) << m << "x" << n << "x" << k << " accumulate=" << accumulate;
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmShapes,
                         ::testing::Values(std::tuple{1, 1, 1}, std::tuple{3, 5, 7}, std::tuple{17, 600, 130},
                                           std::tuple{64, 513, 257}, std::tuple{2, 1030, 300}));

TEST(Gemm, ThreadCountDoesNotChangeBits) {
  const int m = 40, n = 700, k = 300;
  const auto a = random_values(m * k, 4), b = random_values(k * n, 5);
  std::vector<double> one(m * n), many(m * n);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  parallel::gemm(m, n, k, a.data(), b.data(), one.data(), false);
  omp_set_num_threads(4);
  parallel::gemm(m, n, k, a.data(), b.data(), many.data(), false);
  omp_set_num_threads(saved);
  EXPECT_TRUE(same_bits(one, many));
}

TEST(Transpose, Roundtrip) {
  const auto a = random_values(37 * 71, 6);
  std::vector<double> t(a.size()), back(a.size());
  transpose(37, 71, a.data(), t.data());
  EXPECT_EQ(t[5 * 37 + 2], a[2 * 71 + 5]);
  transpose(71, 37, t.data(), back.data());
  EXPECT_EQ(back, a);
}

// Direct definition of cross-correlation with zero padding.
std::vector<double> conv_oracle(const Conv2dGeometry& g, const std::vector<double>& in, const std::vector<double>& w,
                                const std::vector<double>& bias) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::vector<double> out(g.batch * g.out_channels * oh * ow);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          long double acc = bias[o];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) || ix >= static_cast<long>(g.width)) continue;
                acc += static_cast<long double>(in[((b * g.in_channels + c) * g.height + iy) * g.width + ix]) *
                       w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
              }
          out[((b * g.out_channels + o) * oh + y) * ow + x] = static_cast<double>(acc);
        }
  return out;
}

class ConvCases : public ::testing::TestWithParam<Conv2dGeometry> {};

TEST_P(ConvCases, ForwardMatchesOracleAndParallelMatchesReference) {
  const Conv2dGeometry g = GetParam();
  const auto in = random_values(g.batch * g.in_channels * g.height * g.width, 10);
  const auto w = random_values(g.out_channels * g.patch_size(), 11);
  const auto bias = random_values(g.out_channels, 12);
  const std::size_t out_n = g.batch * g.out_channels * g.out_height() * g.out_width();
  std::vector<double> ref(out_n), par(out_n);
  reference::conv2d_forward(g, in.data(), w.data(), bias.data(), ref.data());
  parallel::conv2d_forward(g, in.data(), w.data(), bias.data(), par.data());
  EXPECT_TRUE(same_bits(ref, par));
  const auto oracle = conv_oracle(g, in, w, bias);
  for (std::size_t i = 0; i < out_n; ++i) EXPECT_NEAR(ref[i], oracle[i], 1e-12);
}

TEST_P(ConvCases, BackwardParallelMatchesReferenceAndIsAdjointOfForward) {
  const Conv2dGeometry g = GetParam();
  const std::size_t in_n = g.batch * g.in_channels * g.height * g.width;
  const std::size_t out_n = g.batch * g.out_channels * g.out_height() * g.out_width();
  const auto in = random_values(in_n, 13), w = random_values(g.out_channels * g.patch_size(), 14);
  const auto gout = random_values(out_n, 15);
  std::vector<double> gin_r(in_n, 0.5), gw_r(w.size(), 0.25), gb_r(g.out_channels, 0.125);
  auto gin_p = gin_r, gw_p = gw_r, gb_p = gb_r;
  reference::conv2d_backward(g, in.data(), w.data(), gout.data(), gin_r.data(), gw_r.data(), gb_r.data());
  parallel::conv2d_backward(g, in.data(), w.data(), gout.data(), gin_p.data(), gw_p.data(), gb_p.data());
  EXPECT_TRUE(same_bits(gin_r, gin_p));
  EXPECT_TRUE(same_bits(gw_r, gw_p));
  EXPECT_TRUE(same_bits(gb_r, gb_p));

  // <gout, conv(in, w)> is bilinear: its input gradient is the backward pass.
  std::vector<double> gin(in_n, 0.0), gw(w.size(), 0.0);
  reference::conv2d_backward(g, in.data(), w.data(), gout.data(), gin.data(), gw.data(), nullptr);
  std::vector<double> zero_bias(g.out_channels, 0.0), out(out_n);
  reference::conv2d_forward(g, in.data(), w.data(), zero_bias.data(), out.data());
  double lhs = 0, via_in = 0, via_w = 0;
  for (std::size_t i = 0; i < out_n; ++i) lhs += gout[i] * out[i];
  for (std::size_t i = 0; i < in_n; ++i) via_in += gin[i] * in[i];
  for (std::size_t i = 0; i < w.size(); ++i) via_w += gw[i] * w[i];
  EXPECT_NEAR(lhs, via_in, 1e-9 * std::max(1.0, std::abs(lhs)));
  EXPECT_NEAR(lhs, via_w, 1e-9 * std::max(1.0, std::abs(lhs)));
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvCases,
                         ::testing::Values(Conv2dGeometry{1, 1, 5, 5, 1, 3, 1, 0}, Conv2dGeometry{2, 3, 8, 7, 4, 3, 1, 1},
                                           Conv2dGeometry{2, 3, 32, 32, 5, 5, 2, 1},
                                           Conv2dGeometry{1, 2, 6, 6, 3, 2, 2, 0},
                                           Conv2dGeometry{3, 4, 4, 4, 2, 3, 1, 0}));

TEST(Conv, ValidateRejectsImpossibleGeometry) {
  EXPECT_THROW((Conv2dGeometry{1, 1, 2, 2, 1, 5, 1, 0}.validate()), etx::ConfigError);
  EXPECT_THROW((Conv2dGeometry{1, 1, 5, 5, 1, 3, 0, 0}.validate()), etx::ConfigError);
}

TEST(MaxPool, FirstMaximumWinsTiesAndGradientRoutesToIt) {
  const Pool2dGeometry g{1, 1, 2, 4, 2, 2};
  const std::vector<double> in{1, 3, 5, 5, 3, 2, 5, 5};
  std::vector<double> out(2);
  std::vector<std::size_t> arg(2);
  reference::maxpool2d_forward(g, in.data(), out.data(), arg.data());
  EXPECT_EQ(out, (std::vector<double>{3, 5}));
  EXPECT_EQ(arg, (std::vector<std::size_t>{1, 2}));
  std::vector<double> gin(8, 0.0);
  const std::vector<double> gout{10, 20};
  reference::maxpool2d_backward(g, arg.data(), gout.data(), gin.data());
  EXPECT_EQ(gin, (std::vector<double>{0, 10, 20, 0, 0, 0, 0, 0}));
}

TEST(MaxPool, ParallelMatchesReference) {
  const Pool2dGeometry g{3, 5, 9, 8, 2, 2};
  const auto in = random_values(g.batch * g.channels * g.height * g.width, 20);
  const std::size_t out_n = g.batch * g.channels * g.out_height() * g.out_width();
  std::vector<double> ro(out_n), po(out_n);
  std::vector<std::size_t> ra(out_n), pa(out_n);
  reference::maxpool2d_forward(g, in.data(), ro.data(), ra.data());
  parallel::maxpool2d_forward(g, in.data(), po.data(), pa.data());
  EXPECT_TRUE(same_bits(ro, po));
  EXPECT_EQ(ra, pa);
  const auto gout = random_values(out_n, 21);
  std::vector<double> rg(in.size(), 0.0), pg(in.size(), 0.0);
  reference::maxpool2d_backward(g, ra.data(), gout.data(), rg.data());
  parallel::maxpool2d_backward(g, pa.data(), gout.data(), pg.data());
  EXPECT_TRUE(same_bits(rg, pg));
}

}  // namespace
