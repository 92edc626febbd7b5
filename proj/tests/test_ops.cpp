#include <gtest/gtest.h>

#include <cmath>

#include "etx/error.hpp"
#include "etx/ops.hpp"
#include "test_util.hpp"

namespace {

using namespace etx;
using etx::testing::expect_gradients_match;
using etx::testing::random_tensor;

// Loss = sum(f(leaves) * R) for a fixed random R, so every output coordinate matters.
using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

void check_op(std::vector<Tensor> leaf_values, const Graph& graph, std::uint64_t seed = 99) {
  std::vector<Tensor*> leaves;
  for (Tensor& t : leaf_values) leaves.push_back(&t);
  std::optional<Tensor> weights;
  auto build = [&](Tape& tape) {
    std::vector<Var> vars;
    for (Tensor* t : leaves) vars.push_back(tape.parameter(*t));
    Var out = graph(tape, vars);
    if (!weights) weights = random_tensor(out.shape(), seed);
    return sum(mul(out, tape.constant(*weights)));
  };
  auto loss = [&] {
    Tape tape;
    return build(tape).tensor()[0];
  };
  auto analytic = [&] {
    for (Tensor* t : leaves) t->drop_grad();
    Tape tape;
    tape.backward(build(tape));
  };
  expect_gradients_match(leaves, loss, analytic);
}

TEST(Ops, MatmulValuesAndGradients) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor({2, 1}, {5, 6}));
  const Tensor c = matmul(a, b).tensor();
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17);
  EXPECT_EQ(c[1], 39);
  check_op({random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)},
           [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
}

TEST(Ops, LinearUsesWeightRowsPerUnit) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2}, {1, 2}));
  Var w = tape.constant(Tensor({3, 2}, {1, 0, 0, 1, 1, 1}));
  Var b = tape.constant(Tensor({3}, {10, 20, 30}));
  const Tensor y = linear(x, w, b).tensor();
  EXPECT_EQ(y.values()[0], 11);
  EXPECT_EQ(y.values()[1], 22);
  EXPECT_EQ(y.values()[2], 33);
  check_op({random_tensor({4, 6}, 3), random_tensor({5, 6}, 4), random_tensor({5}, 5)},
           [](Tape&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); });
}

TEST(Ops, ElementwiseGradients) {
  check_op({random_tensor({3, 4}, 6), random_tensor({3, 4}, 7)},
           [](Tape&, const std::vector<Var>& v) { return add(v[0], mul(v[0], v[1])); });
  check_op({random_tensor({5, 7}, 8)}, [](Tape&, const std::vector<Var>& v) { return relu(v[0]); });
}

TEST(Ops, ReluPassesGradientOnlyForPositiveInputs) {
  Tensor x({4}, {-1.0, 0.0, 2.0, -3.0});
  Tape tape;
  Var v = tape.parameter(x);
  tape.backward(sum(relu(v)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1, 0}));
}

TEST(Ops, Conv2dGradients) {
  check_op({random_tensor({2, 2, 6, 5}, 9), random_tensor({3, 2, 3, 3}, 10), random_tensor({3}, 11)},
           [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1, 1); });
  check_op({random_tensor({1, 3, 9, 9}, 12), random_tensor({2, 3, 5, 5}, 13), random_tensor({2}, 14)},
           [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 2, 1); });
}

TEST(Ops, Conv2dAcceptsUnbatchedInput) {
  Tape tape;
  Var x = tape.constant(random_tensor({2, 5, 5}, 15));
  Var w = tape.constant(random_tensor({4, 2, 3, 3}, 16));
  Var b = tape.constant(random_tensor({4}, 17));
  EXPECT_EQ(conv2d(x, w, b, 1, 0).shape(), (Shape{4, 3, 3}));
  EXPECT_THROW(conv2d(x, tape.constant(random_tensor({4, 3, 3, 3}, 18)), b, 1, 0), DimensionError);
}

TEST(Ops, MaxPoolAndFlattenGradients) {
  check_op({random_tensor({2, 3, 6, 4}, 19)},
           [](Tape&, const std::vector<Var>& v) { return flatten(maxpool2d(v[0], 2, 2)); });
  Tape tape;
  EXPECT_EQ(flatten(tape.constant(random_tensor({2, 3, 4}, 20))).shape(), (Shape{2, 12}));
}

TEST(Ops, BatchNormTrainGradientsAndStatistics) {
  check_op({random_tensor({4, 3, 2, 2}, 21), random_tensor({3}, 22, 0.5, 1.5), random_tensor({3}, 23)},
           [](Tape&, const std::vector<Var>& v) {
             BatchNormRunning running(3);
             return batchnorm2d_train(v[0], v[1], v[2], running);
           });
  check_op({random_tensor({5, 4}, 24), random_tensor({4}, 25, 0.5, 1.5), random_tensor({4}, 26)},
           [](Tape&, const std::vector<Var>& v) {
             BatchNormRunning running(4);
             return batchnorm2d_train(v[0], v[1], v[2], running);
           });
}

TEST(Ops, BatchNormTrainNormalizesAndUpdatesRunningStats) {
  const Tensor x({4, 1}, {1, 2, 3, 6});  // mean 3, biased var 3.5, unbiased var 14/3
  Tape tape;
  BatchNormRunning running(1);
  const Tensor y = batchnorm2d_train(tape.constant(x), tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 0.0)),
                                     running)
                       .tensor();
  double mean = 0, sq = 0;
  for (double v : y.values()) mean += v / 4;
  for (double v : y.values()) sq += (v - mean) * (v - mean) / 4;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(sq, 3.5 / (3.5 + kBatchNormEps), 1e-12);
  EXPECT_NEAR(running.mean[0], 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(running.var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
}

TEST(Ops, BatchNormTrainRejectsSingleSampleBatch) {
  Tape tape;
  BatchNormRunning running(2);
  EXPECT_THROW(batchnorm2d_train(tape.constant(random_tensor({1, 2, 3, 3}, 27)), tape.constant(Tensor({2}, 1.0)),
                                 tape.constant(Tensor({2}, 0.0)), running),
               ConfigError);
}

TEST(Ops, BatchNormEvalUsesRunningStatistics) {
  BatchNormRunning running(1);
  running.mean[0] = 2.0;
  running.var[0] = 4.0;
  Tape tape;
  const Tensor y = batchnorm2d_eval(tape.constant(Tensor({1, 1}, {6.0})), tape.constant(Tensor({1}, 3.0)),
                                    tape.constant(Tensor({1}, 1.0)), running)
                       .tensor();
  EXPECT_NEAR(y[0], 3.0 * 4.0 / std::sqrt(4.0 + kBatchNormEps) + 1.0, 1e-12);
  check_op({random_tensor({3, 2, 2, 2}, 28), random_tensor({2}, 29), random_tensor({2}, 30)},
           [running2 = BatchNormRunning(2)](Tape&, const std::vector<Var>& v) {
             return batchnorm2d_eval(v[0], v[1], v[2], running2);
           });
}

TEST(Ops, LogSoftmaxNllValueAndGradient) {
  Tape tape;
  const std::vector<int> labels{0, 1};
  const Tensor loss = log_softmax_nll(tape.constant(Tensor({2, 2}, {0, 0, 1000, 0})), labels).tensor();
  // Row 0: log 2. Row 1: label 1 with a 1000 gap, loss 1000 + log(1 + e^-1000).
  EXPECT_NEAR(loss[0], (std::log(2.0) + 1000.0) / 2, 1e-9);

  Tensor logits = random_tensor({4, 3}, 31, -3, 3);
  const std::vector<int> y{0, 2, 1, 2};
  expect_gradients_match(
      {&logits},
      [&] {
        Tape t;
        return log_softmax_nll(t.constant(logits), y).tensor()[0];
      },
      [&] {
        logits.drop_grad();
        Tape t;
        t.backward(log_softmax_nll(t.parameter(logits), y));
      });
}

TEST(Ops, LogSoftmaxNllGradientSurvivesSaturation) {
  // The label probability rounds to 1; the gradient must still push the label logit up.
  Tensor logits({1, 2}, {50.0, 0.0});
  Tape tape;
  tape.backward(log_softmax_nll(tape.parameter(logits), std::vector<int>{0}));
  EXPECT_LT(logits.grad()[0], 0.0);
  EXPECT_GT(logits.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(logits.grad()[0], -logits.grad()[1]);
}

TEST(Ops, LogSoftmaxNllRejectsBadLabels) {
  Tape tape;
  Var z = tape.constant(Tensor({2, 2}, 0.0));
  EXPECT_THROW(log_softmax_nll(z, std::vector<int>{0, 2}), InputError);
  EXPECT_THROW(log_softmax_nll(z, std::vector<int>{0}), DimensionError);
}

TEST(Tape, BackwardRequiresScalarFromSameTape) {
  Tape a, b;
  Tensor p({2}, 1.0);
  Var v = a.parameter(p);
  EXPECT_THROW(a.backward(v), UsageError);
  EXPECT_THROW(b.backward(sum(v)), UsageError);
  EXPECT_THROW(a.backward(Var{}), UsageError);
}

TEST(Tape, ParameterGradientsAccumulateAcrossTapes) {
  Tensor p({2}, {1.0, 2.0});
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(mul(tape.parameter(p), tape.constant(Tensor({2}, {3.0, 4.0})))));
  }
  EXPECT_EQ(p.grad()[0], 6.0);
  EXPECT_EQ(p.grad()[1], 8.0);
  p.zero_grad();
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Tape, ConstantsRecordNoBackwardRules) {
  Tape tape;
  Var a = tape.constant(Tensor({2}, 1.0));
  relu(add(a, a));
  EXPECT_EQ(tape.op_count(), 0u);
}

TEST(Tensor, RejectsInconsistentShapes) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3});
  EXPECT_THROW(t.reshape({4}), DimensionError);
  EXPECT_THROW(t.grad(), UsageError);
}

}  // namespace
