#include <gtest/gtest.h>

#include <cmath>

#include "etx/adversarial.hpp"
#include "etx/error.hpp"
#include "etx/experiments.hpp"
#include "test_util.hpp"

namespace {

using namespace etx;
using etx::testing::random_values;

TEST(InputGradient, LinearModelClosedForm) {
  const std::size_t n = 6;
  NetworkSpec spec{"linear", {n}, {layer::FullyConnected{n, 2}}, 2};
  Network net(spec, 3);
  auto params = net.parameters();
  const auto bias = random_values(2, 4);
  std::copy(bias.begin(), bias.end(), params[1]->values().begin());
  const Tensor& w = *params[0];
  const auto x = random_values(n, 5);
  for (int y : {0, 1}) {
    double z[2];
    for (int k = 0; k < 2; ++k) {
      z[k] = bias[k];
      for (std::size_t i = 0; i < n; ++i) z[k] += w[k * n + i] * x[i];
    }
    const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
    const double p[2] = {1.0 - p1, p1};
    const auto g = input_gradient(net, x, y);
    for (std::size_t i = 0; i < n; ++i) {
      const double expect = (p[0] - (y == 0)) * w[i] + (p[1] - (y == 1)) * w[n + i];
      EXPECT_NEAR(g[i], expect, 1e-14);
    }
  }
}

TEST(InputGradient, MatchesFiniteDifferencesOnToyNet) {
  NetworkSpec spec{"toy", {20}, {layer::FullyConnected{20, 8}, layer::Relu{}, layer::FullyConnected{8, 2}}, 2};
  Network net(spec, 9);
  auto x = random_values(20, 10, 0.0, 1.0);
  const int y = 1;
  const auto g = input_gradient(net, x, y);
  auto loss = [&](const std::vector<double>& v) {
    Tape tape;
    return log_softmax_nll(net.forward_eval(tape, tape.constant(Tensor({1, 20}, v))), std::vector<int>{y})
        .tensor()[0];
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < 20; ++i) {
    auto up = x, down = x;
    up[i] += h;
    down[i] -= h;
    const double fd = (loss(up) - loss(down)) / (2 * h);
    EXPECT_TRUE(etx::testing::close(g[i], fd, 1e-4, 1e-10)) << i << ": " << g[i] << " vs " << fd;
  }
}

TEST(InputGradient, BatchedRowsMatchSingleSamples) {
  Network net(preset_spec("fc_shallow"), 2);
  const Dataset d = synthetic_noise_dataset(6, 3072, 3);
  const std::size_t idx[] = {0, 3, 5};
  const auto rows = input_gradients(net, d.batch(idx, {3072}), d.batch_labels(idx));
  for (std::size_t r = 0; r < 3; ++r) {
    const auto single = input_gradient(net, d.sample(idx[r]), d.labels[idx[r]]);
    for (std::size_t i = 0; i < 3072; ++i) ASSERT_NEAR(rows[r][i], single[i], 1e-15 + 1e-12 * std::abs(single[i]));
  }
}

TEST(InputGradient, DuplicatedSampleLeavesDirectionUnchanged) {
  Network net(preset_spec("fc_shallow"), 2);
  const Dataset d = synthetic_noise_dataset(2, 3072, 4);
  const std::size_t pair[] = {0, 0};
  const auto rows = input_gradients(net, d.batch(pair, {3072}), d.batch_labels(pair));
  const Direction single = adversarial_direction(net, d.sample(0), d.labels[0], AttackMethod::grad);
  const Direction dup = direction_from_gradient(rows[0], AttackMethod::grad);
  for (std::size_t i = 0; i < 3072; ++i) ASSERT_NEAR(dup.values[i], single.values[i], 1e-14);
}

TEST(Direction, GradAndSignOfSimpleVector) {
  const std::vector<double> g{3.0, 4.0};
  const Direction d = direction_from_gradient(g, AttackMethod::grad);
  EXPECT_NEAR(d.values[0], 0.6, 1e-15);
  EXPECT_NEAR(d.values[1], 0.8, 1e-15);
  EXPECT_FALSE(d.degenerate);
  const Direction s = direction_from_gradient(g, AttackMethod::sign);
  EXPECT_EQ(s.values, (std::vector<double>{1.0, 1.0}));
  const Direction z = direction_from_gradient(std::vector<double>{0.0, 0.0}, AttackMethod::grad);
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(direction_from_gradient(std::vector<double>{-2.0, 0.0, 5.0}, AttackMethod::sign).values,
            (std::vector<double>{-1.0, 0.0, 1.0}));
}

TEST(Direction, UnitNormAndSignAgreement) {
  Network net(preset_spec("fc_deep"), 5);
  const Dataset d = synthetic_noise_dataset(20, 3072, 6);
  std::vector<std::size_t> idx(20);
  std::iota(idx.begin(), idx.end(), 0);
  const auto grad = adversarial_directions(net, d, idx, AttackMethod::grad, 1, 7);
  const auto sign = adversarial_directions(net, d, idx, AttackMethod::sign, 1, 7);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ASSERT_FALSE(grad[i].degenerate);
    double ss = 0;
    for (double v : grad[i].values) ss += v * v;
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-9);
    for (double v : sign[i].values) ASSERT_TRUE(v == -1.0 || v == 0.0 || v == 1.0);
    EXPECT_LT(folded_angle_between(grad[i].values, sign[i].values), 90.0);
    EXPECT_EQ(grad[i].sample_id, idx[i]);
    EXPECT_EQ(grad[i].model_id, 1);
  }
}

TEST(Angle, BasicValues) {
  const std::vector<double> u{1.0, 2.0, 3.0}, neg{-1.0, -2.0, -3.0};
  EXPECT_EQ(angle_between(u, u), 0.0);
  EXPECT_NEAR(angle_between(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 90.0, 1e-12);
  EXPECT_NEAR(angle_between(u, neg), 180.0, 1e-6);
  EXPECT_THROW(angle_between(u, std::vector<double>{0, 0, 0}), DomainError);
  EXPECT_THROW(angle_between(u, std::vector<double>{1, 2}), DomainError);
}

TEST(Angle, SymmetricAndScaleInvariant) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto u = random_values(50, s), v = random_values(50, s + 100);
    EXPECT_EQ(angle_between(u, v), angle_between(v, u));
    auto scaled = u;
    for (double& x : scaled) x *= 3.7;
    EXPECT_NEAR(angle_between(scaled, v), angle_between(u, v), 1e-10);
  }
}

TEST(Fold, ValuesIdempotenceAndRange) {
  EXPECT_EQ(fold_angle(120), 60);
  EXPECT_EQ(fold_angle(90), 90);
  EXPECT_EQ(fold_angle(170), 10);
  EXPECT_EQ(fold_angle(0), 0);
  for (double a = 0; a <= 180; a += 0.25) {
    const double f = fold_angle(a);
    EXPECT_GE(f, 0);
    EXPECT_LE(f, 90);
    EXPECT_EQ(fold_angle(f), f);
  }
  EXPECT_THROW(fold_angle(-1), DomainError);
  EXPECT_THROW(fold_angle(180.5), DomainError);
  EXPECT_THROW(fold_angle(std::nan("")), DomainError);
}

TEST(Angle, IndependentUntrainedNetworksAreNearlyOrthogonal) {
  const RunSeeds seeds = seeds_from_base(17);
  Network a(preset_spec("fc_deep"), seeds.model1), b(preset_spec("fc_deep"), seeds.model2);
  const Dataset test = synthetic_noise_dataset(200, 3072, 8);
  const auto pool = eval_pool(test, 100, seeds.eval);
  const PairMeasurement m = measure_pair(a, b, test, pool, AttackMethod::grad);
  EXPECT_EQ(m.degenerate_count, 0u);
  EXPECT_GE(m.angle_mean_deg, 85.0);
  EXPECT_LE(m.angle_mean_deg, 90.0);
}

TEST(AttackMethod, Parse) {
  EXPECT_EQ(parse_attack_method("sign"), AttackMethod::sign);
  EXPECT_THROW(parse_attack_method("pgd"), ConfigError);
}

}  // namespace
