#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "etx/error.hpp"
#include "etx/experiments.hpp"
#include "etx/seeding.hpp"

namespace {

using namespace etx;

ExperimentConfig small_config(std::uint64_t base = 1) {
  ExperimentConfig c;
  c.arch1 = c.arch2 = "fc_shallow";
  c.presets.fc_shallow_hidden = 16;
  c.source = DatasetSource::synthetic;
  c.synthetic_train = 256;
  c.synthetic_test = 120;
  c.batch_size = 32;
  c.steps = 3;
  c.epochs = 2;
  c.seed_base = base;
  c.seeds = seeds_from_base(base);
  return c;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

TEST(Seeds, DerivedFromBaseAndDistinct) {
  const RunSeeds s = seeds_from_base(0);
  const std::set<std::uint64_t> all{s.model1, s.model2, s.shuffle1, s.shuffle2, s.eval};
  EXPECT_EQ(all.size(), 5u);
  EXPECT_EQ(s.model1, derive_seed(0, 1));
  EXPECT_EQ(s.eval, derive_seed(0, 5));
}

TEST(Config, Validation) {
  ExperimentConfig c = small_config();
  EXPECT_NO_THROW(validate(c));
  c.seeds.model2 = c.seeds.model1;
  EXPECT_THROW(validate(c), ConfigError);
  c.allow_shared_seeds = true;
  EXPECT_NO_THROW(validate(c));
  c = small_config();
  c.optimizer.lr = -1;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_config();
  c.batch_size = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_config();
  c.arch2 = "nope";
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(EvalPool, DrawsDistinctTestIndices) {
  const Dataset test = synthetic_noise_dataset(300, 8, 1, Split::test);
  const auto pool = eval_pool(test, 100, 5);
  EXPECT_EQ(pool.size(), 100u);
  EXPECT_EQ(std::set<std::size_t>(pool.begin(), pool.end()).size(), 100u);
  for (auto i : pool) EXPECT_LT(i, 300u);
  EXPECT_EQ(pool, eval_pool(test, 100, 5));
  EXPECT_EQ(eval_pool(test, 1000, 5).size(), 300u);
}

TEST(PairedTraining, TicksStartAtZeroAndAreReproducible) {
  const ExperimentConfig c = small_config();
  const ExperimentData data = load_experiment_data(c);
  EXPECT_EQ(data.test.split, Split::test);
  std::vector<std::size_t> streamed;
  const RunSeries a = run_paired_training(c, data, [&](const TickRecord& t) { streamed.push_back(t.tick); });
  const RunSeries b = run_paired_training(c, data);
  ASSERT_FALSE(a.diverged);
  ASSERT_EQ(a.ticks.size(), 4u);
  EXPECT_EQ(streamed, (std::vector<std::size_t>{0, 1, 2, 3}));
  for (std::size_t i = 0; i < a.ticks.size(); ++i) {
    EXPECT_EQ(a.ticks[i].tick, i);
    EXPECT_TRUE(same_bits(a.ticks[i].angle_mean_deg, b.ticks[i].angle_mean_deg));
    EXPECT_TRUE(same_bits(a.ticks[i].angle_std_deg, b.ticks[i].angle_std_deg));
    EXPECT_TRUE(same_bits(a.ticks[i].acc_model1, b.ticks[i].acc_model1));
    EXPECT_TRUE(same_bits(a.ticks[i].acc_model2, b.ticks[i].acc_model2));
    EXPECT_GE(a.ticks[i].angle_mean_deg, 0.0);
    EXPECT_LE(a.ticks[i].angle_mean_deg, 90.0);
    EXPECT_GE(a.ticks[i].acc_model1, 0.0);
    EXPECT_LE(a.ticks[i].acc_model1, 1.0);
  }
}

TEST(PairedTraining, IdenticalTwinsStayAtZeroDegrees) {
  ExperimentConfig c = small_config(2);
  c.seeds.model2 = c.seeds.model1;
  c.seeds.shuffle2 = c.seeds.shuffle1;
  c.allow_shared_seeds = true;
  const RunSeries s = run_paired_training(c, load_experiment_data(c));
  for (const auto& t : s.ticks) {
    EXPECT_EQ(t.angle_mean_deg, 0.0) << t.tick;
    EXPECT_EQ(t.acc_model1, t.acc_model2);
  }
}

TEST(PairedTraining, ZeroLearningRateKeepsTheNullAngle) {
  ExperimentConfig c = small_config(3);
  c.presets.fc_shallow_hidden = 100;
  c.optimizer.lr = 0.0;
  const RunSeries s = run_paired_training(c, load_experiment_data(c));
  for (const auto& t : s.ticks) {
    EXPECT_GE(t.angle_mean_deg, 85.0) << t.tick;
    EXPECT_LE(t.angle_mean_deg, 90.0) << t.tick;
    EXPECT_EQ(t.angle_mean_deg, s.ticks.front().angle_mean_deg);
  }
}

TEST(PairedTraining, DivergenceStopsWithDiagnostic) {
  ExperimentConfig c = small_config(4);
  c.optimizer.kind = OptimizerKind::sgd;
  c.optimizer.lr = 1e300;
  const RunSeries s = run_paired_training(c, load_experiment_data(c));
  EXPECT_TRUE(s.diverged);
  EXPECT_NE(s.diagnostic.find("diverged at tick 1"), std::string::npos) << s.diagnostic;
  EXPECT_EQ(s.ticks.size(), 1u);
  bool status = false;
  for (const auto& [k, v] : s.manifest) status |= k == "status" && v == "diverged";
  EXPECT_TRUE(status);
}

TEST(PairedTraining, ArchitectureMustMatchData) {
  ExperimentConfig c = small_config();
  c.synthetic_dim = 100;
  EXPECT_THROW(run_paired_training(c, load_experiment_data(c)), DimensionError);
}

TEST(LongTerm, OneTickPerEpochAndZeroEpochBudget) {
  ExperimentConfig c = small_config(5);
  const ExperimentData data = load_experiment_data(c);
  const RunSeries s = run_long_term(c, data);
  ASSERT_EQ(s.ticks.size(), 3u);
  EXPECT_EQ(s.ticks.back().tick, 2u);
  c.epochs = 0;
  EXPECT_EQ(run_long_term(c, data).ticks.size(), 1u);
}

TEST(LongTerm, ConvolutionalPairRuns) {
  ExperimentConfig c = small_config(6);
  c.arch1 = c.arch2 = "conv_b";
  c.presets.conv_width_divisor = 32;
  c.synthetic_train = 64;
  c.synthetic_test = 20;
  c.angle_samples = 10;
  c.batch_size = 16;
  c.epochs = 1;
  const RunSeries s = run_long_term(c, load_experiment_data(c));
  ASSERT_FALSE(s.diverged) << s.diagnostic;
  EXPECT_EQ(s.ticks.size(), 2u);
}

TEST(Manifest, RecordsEverySeed) {
  const ExperimentConfig c = small_config(9);
  const Manifest m = config_manifest(c);
  auto value = [&](const std::string& key) {
    for (const auto& [k, v] : m)
      if (k == key) return v;
    return std::string("<missing>");
  };
  EXPECT_EQ(value("seed_model1"), std::to_string(c.seeds.model1));
  EXPECT_EQ(value("seed_eval"), std::to_string(c.seeds.eval));
  EXPECT_EQ(value("dataset"), "synthetic");
  EXPECT_EQ(value("eval_pool_split"), "test");
}

TEST(UpdateCorrelation, SymmetryControlAndDeviation) {
  const Dataset train = synthetic_noise_dataset(200, 3072, 10);
  const auto spec = preset_spec("fc_shallow");
  RunSeeds same = seeds_from_base(11);
  same.model2 = same.model1;
  same.shuffle2 = same.shuffle1;
  const CorrelationReport twin = run_update_correlation(spec, spec, train, 30, same);
  EXPECT_EQ(twin.within_1, twin.within_2);

  const CorrelationReport r = run_update_correlation(spec, spec, train, 30, seeds_from_base(11));
  for (double v : {r.within_1, r.within_2, r.between}) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 80.0);
  }
}

TEST(UpdateCorrelation, RequiresFullyConnectedFirstLayer) {
  const Dataset train = synthetic_noise_dataset(60, 3072, 10);
  EXPECT_THROW(run_update_correlation(preset_spec("conv_a"), preset_spec("fc_shallow"), train, 30, seeds_from_base(1)),
               ConfigError);
}

TEST(Alignment, ZeroLearningRateIsNullAndLargeStepAligns) {
  ExperimentConfig c = small_config(12);
  c.synthetic_train = 200;
  c.synthetic_test = 200;
  const ExperimentData data = load_experiment_data(c);
  const auto spec = preset_spec("fc_shallow");
  AlignmentConfig control;
  control.lr = 0.0;
  const AlignmentReport null = run_weight_adversarial_alignment(spec, spec, data, control, c.seeds);
  EXPECT_GE(null.align_1, 85.0);
  EXPECT_LE(null.align_1, 90.0);
  EXPECT_GE(null.align_2, 85.0);
  const AlignmentReport big = run_weight_adversarial_alignment(spec, spec, data, AlignmentConfig{}, c.seeds);
  EXPECT_LT(big.align_1, 80.0);
  EXPECT_LT(big.align_2, 80.0);
  EXPECT_GT(big.lr_1, 0.0);
}

TEST(Alignment, MeanRowDirectionAngle) {
  const Tensor rows({2, 2}, {1.0, 0.0, 0.0, 2.0});
  std::vector<Direction> dirs(2);
  dirs[0].values = {1.0, 0.0};
  dirs[1].degenerate = true;
  dirs[1].values = {0.0, 0.0};
  // Row 0 is parallel (0 deg), row 1 orthogonal (90 deg); the degenerate direction is skipped.
  EXPECT_NEAR(mean_row_direction_angle(rows, dirs), 45.0, 1e-12);
}

}  // namespace
