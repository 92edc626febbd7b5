#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "etx/adversarial.hpp"
#include "etx/data.hpp"
#include "etx/models.hpp"
#include "etx/optim.hpp"

namespace etx {

inline constexpr const char* kToolVersion = "0.1.0";

enum class DatasetSource { cifar, synthetic };

std::string_view to_string(DatasetSource source);
DatasetSource parse_dataset_source(std::string_view name);

struct RunSeeds {
  std::uint64_t model1 = 0;
  std::uint64_t model2 = 0;
  std::uint64_t shuffle1 = 0;
  std::uint64_t shuffle2 = 0;
  std::uint64_t eval = 0;
};

// model1 = h(base,1), model2 = h(base,2), shuffle1 = h(base,3), shuffle2 = h(base,4), eval = h(base,5).
RunSeeds seeds_from_base(std::uint64_t base);

struct ExperimentConfig {
  std::string arch1 = "fc_deep";
  std::string arch2 = "fc_deep";
  PresetOptions presets;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-2};
  std::size_t batch_size = 128;
  std::size_t steps = 30;   // paired training ticks after tick 0
  std::size_t epochs = 15;  // long-term ticks after tick 0
  std::uint64_t seed_base = 0;
  RunSeeds seeds = seeds_from_base(0);
  // Identical model or shuffle seeds are rejected unless this is set (twin control).
  bool allow_shared_seeds = false;

  DatasetSource source = DatasetSource::cifar;
  std::array<int, 2> classes{3, 5};
  std::optional<std::filesystem::path> data_dir;
  std::size_t max_train_per_class = 2000;  // 0 keeps every sample
  std::size_t max_test_per_class = 0;
  std::size_t synthetic_train = 4000;
  std::size_t synthetic_test = 1000;
  std::size_t synthetic_dim = kCifarImageBytes;

  AttackMethod method = AttackMethod::grad;
  std::size_t angle_samples = 100;
  // Test samples scored for accuracy at every tick; 0 scores the whole test split.
  std::size_t accuracy_samples = 0;
};

// Throws ConfigError on shared seeds (unless allowed), lr < 0 or non-finite, batch 0,
// zero angle samples or unknown architectures.
void validate(const ExperimentConfig& config);

struct ExperimentData {
  Dataset train;
  Dataset test;
};

// CIFAR pair from config.data_dir / $EARLY_TRANSFER_DATA_DIR, or seeded synthetic noise
// (train from h(seed_base, 6), test from h(seed_base, 7)). Throws InputError when CIFAR is
// requested but not found.
ExperimentData load_experiment_data(const ExperimentConfig& config);

// First `count` test indices of a permutation seeded by `seed`.
std::vector<std::size_t> eval_pool(const Dataset& test, std::size_t count, std::uint64_t seed);

using Manifest = std::vector<std::pair<std::string, std::string>>;

// Every field needed to rerun the experiment, as ordered key/value pairs.
Manifest config_manifest(const ExperimentConfig& config);

struct TickRecord {
  std::size_t tick = 0;
  double angle_mean_deg = 0.0;
  double angle_std_deg = 0.0;
  std::size_t degenerate_count = 0;
  double acc_model1 = 0.0;
  double acc_model2 = 0.0;
};

/// Measurements at tick 0 (before any update) and after each step or epoch.
/// A divergent run stops at the failing tick with `diverged` set and a diagnostic.
struct RunSeries {
  std::vector<TickRecord> ticks;
  Manifest manifest;
  bool diverged = false;
  std::string diagnostic;
};

struct PairMeasurement {
  double angle_mean_deg;
  double angle_std_deg;
  std::size_t degenerate_count;  // samples where either model's gradient is exactly zero
};

// Folded angles between the two models' adversarial directions over `pool`,
// skipping degenerate samples. NaN mean/std when every sample is degenerate.
PairMeasurement measure_pair(const Network& net1, const Network& net2, const Dataset& test,
                             std::span<const std::size_t> pool, AttackMethod method);

// Called with every tick as soon as it is measured.
using TickCallback = std::function<void(const TickRecord&)>;

// Trains both models one step at a time on their own shuffles; one tick per step.
RunSeries run_paired_training(const ExperimentConfig& config, const ExperimentData& data,
                              const TickCallback& on_tick = {});

// As run_paired_training with one tick per epoch.
RunSeries run_long_term(const ExperimentConfig& config, const ExperimentData& data, const TickCallback& on_tick = {});

struct CorrelationReport {
  double within_1 = 0.0;  // mean folded angle between distinct update rows of model 1
  double within_2 = 0.0;
  double between = 0.0;  // every (model 1 row, model 2 row) pair
  std::size_t zero_rows_1 = 0;  // all-zero update rows, left out of the averages
  std::size_t zero_rows_2 = 0;
};

// One backward pass per model on its own first batch of `batch_size`, then angle
// statistics over the rows of the first-layer weight gradients.
// Throws ConfigError unless both networks start with a fully-connected layer over the same input.
CorrelationReport run_update_correlation(const NetworkSpec& spec_a, const NetworkSpec& spec_b,
                                         const Dataset& train, std::size_t batch_size, const RunSeeds& seeds);

struct AlignmentConfig {
  // lr = multiplier * ||theta_1 initial|| / ||d theta_1|| (Frobenius norms) unless lr is set.
  double lr_multiplier = 1e3;
  std::optional<double> lr;
  std::size_t batch_size = 30;
  std::size_t angle_samples = 100;
  AttackMethod method = AttackMethod::grad;
};

struct AlignmentReport {
  double align_1 = 0.0;  // mean folded angle between post-step first-layer rows and adversarial directions
  double align_2 = 0.0;
  double lr_1 = 0.0;
  double lr_2 = 0.0;
  std::size_t degenerate_1 = 0;
  std::size_t degenerate_2 = 0;
};

// One SGD step per model on its own batch, then alignment of the first-layer rows with the
// adversarial directions of the stepped model. Throws DomainError on a zero update norm.
AlignmentReport run_weight_adversarial_alignment(const NetworkSpec& spec_a, const NetworkSpec& spec_b,
                                                 const ExperimentData& data, const AlignmentConfig& config,
                                                 const RunSeeds& seeds);

// Mean folded angle between every row of `rows` [k x n] with every non-degenerate direction.
double mean_row_direction_angle(const Tensor& rows, const std::vector<Direction>& directions);

}  // namespace etx
