#include "etx/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "etx/error.hpp"
#include "etx/geometry.hpp"
#include "etx/kernels.hpp"
#include "etx/seeding.hpp"

namespace etx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Dataset head(const Dataset& d, std::size_t count) {
  if (count == 0 || count >= d.size()) return d;
  Dataset out;
  out.sample_shape = d.sample_shape;
  out.class_ids = d.class_ids;
  out.split = d.split;
  out.labels.assign(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(count));
  out.pixels.assign(d.pixels.begin(), d.pixels.begin() + static_cast<std::ptrdiff_t>(count * d.sample_numel()));
  return out;
}

// One optimizer step on the given batch. Returns an empty string on success, else a diagnostic.
std::string train_step(Network& net, OptimizerState& state, const Dataset& train,
                       std::span<const std::size_t> batch) {
  net.set_mode(Mode::train);
  Tape tape;
  Var loss = log_softmax_nll(net.forward(tape, tape.constant(train.batch(batch, net.spec().input_shape))),
                             train.batch_labels(batch));
  const double value = loss.tensor()[0];
  if (!std::isfinite(value)) return fmt::format("non-finite training loss {}", value);
  net.zero_grad();
  tape.backward(loss);
  const auto params = net.parameters();
  optimizer_step(params, state);
  for (const Tensor* p : params) {
    if (!p->all_finite()) return "non-finite parameter after the optimizer step";
  }
  return {};
}

std::vector<double> first_layer_rows_unit(const Tensor& rows, std::size_t& zero_rows,
                                          std::vector<std::size_t>& kept) {
  const std::size_t k = rows.dim(0), n = rows.dim(1);
  std::vector<double> out;
  out.reserve(k * n);
  zero_rows = 0;
  kept.clear();
  for (std::size_t j = 0; j < k; ++j) {
    const double* r = rows.data() + j * n;
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, std::abs(r[i]));
    if (peak == 0.0) {
      ++zero_rows;
      continue;
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (r[i] / peak) * (r[i] / peak);
    const double norm = std::sqrt(ss);
    for (std::size_t i = 0; i < n; ++i) out.push_back(r[i] / peak / norm);
    kept.push_back(j);
  }
  return out;
}

// cos[i][j] between unit rows of a [ka x n] and b [kb x n].
std::vector<double> cosine_matrix(const std::vector<double>& a, std::size_t ka, const std::vector<double>& b,
                                  std::size_t kb, std::size_t n) {
  std::vector<double> bt(n * kb);
  if (kb > 0) kernels::transpose(kb, n, b.data(), bt.data());
  std::vector<double> c(ka * kb, 0.0);
  if (ka > 0 && kb > 0) kernels::parallel::gemm(ka, kb, n, a.data(), bt.data(), c.data(), false);
  return c;
}

void check_first_layer(const NetworkSpec& spec) {
  if (spec.layers.empty() || !std::holds_alternative<layer::FullyConnected>(spec.layers.front())) {
    throw ConfigError("network '" + spec.name + "' does not start with a fully-connected layer");
  }
}

Tensor first_layer_gradient(Network& net, const Dataset& train, std::span<const std::size_t> batch) {
  net.set_mode(Mode::train);
  Tape tape;
  Var loss = log_softmax_nll(net.forward(tape, tape.constant(train.batch(batch, net.spec().input_shape))),
                             train.batch_labels(batch));
  if (!std::isfinite(loss.tensor()[0])) throw DomainError("non-finite loss in the gradient pass");
  net.zero_grad();
  tape.backward(loss);
  Tensor& w = net.first_layer_weight();
  return Tensor(w.shape(), std::vector<double>(w.grad().begin(), w.grad().end()));
}

double frobenius(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

std::string seconds_text(double s) { return fmt::format("{:.3f}", s); }

enum class TickUnit { step, epoch };

RunSeries run_series(const ExperimentConfig& config, const ExperimentData& data, TickUnit unit,
                     const TickCallback& on_tick) {
  validate(config);
  const auto start = std::chrono::steady_clock::now();
  Network net1(preset_spec(config.arch1, config.presets), config.seeds.model1);
  Network net2(preset_spec(config.arch2, config.presets), config.seeds.model2);
  for (const Network* n : {&net1, &net2}) {
    if (shape_numel(n->spec().input_shape) != data.train.sample_numel() ||
        data.train.sample_numel() != data.test.sample_numel()) {
      throw DimensionError("architecture '" + n->spec().name + "' expects " +
                           shape_to_string(n->spec().input_shape) + " inputs, data has " +
                           std::to_string(data.train.sample_numel()) + " values per sample");
    }
  }
  OptimizerState state1(config.optimizer), state2(config.optimizer);
  BatchPlan plan1(data.train.size(), config.batch_size, config.seeds.shuffle1);
  BatchPlan plan2(data.train.size(), config.batch_size, config.seeds.shuffle2);
  const auto pool = eval_pool(data.test, config.angle_samples, config.seeds.eval);
  const Dataset scored = head(data.test, config.accuracy_samples);

  RunSeries series;
  series.manifest = config_manifest(config);
  series.manifest.emplace_back("tick_unit", unit == TickUnit::step ? "step" : "epoch");

  auto record = [&](std::size_t tick) {
    net1.set_mode(Mode::eval);
    net2.set_mode(Mode::eval);
    const auto m = measure_pair(net1, net2, data.test, pool, config.method);
    series.ticks.push_back(
        {tick, m.angle_mean_deg, m.angle_std_deg, m.degenerate_count, accuracy(net1, scored), accuracy(net2, scored)});
    if (on_tick) on_tick(series.ticks.back());
  };

  record(0);
  const std::size_t ticks = unit == TickUnit::step ? config.steps : config.epochs;
  const std::size_t steps_per_tick = unit == TickUnit::step ? 1 : plan1.batches_per_epoch();
  for (std::size_t tick = 1; tick <= ticks && !series.diverged; ++tick) {
    for (std::size_t s = 0; s < steps_per_tick; ++s) {
      for (int which = 1; which <= 2; ++which) {
        Network& net = which == 1 ? net1 : net2;
        OptimizerState& st = which == 1 ? state1 : state2;
        BatchPlan& plan = which == 1 ? plan1 : plan2;
        const auto batch = plan.next();
        const std::string diag = train_step(net, st, data.train, batch);
        if (!diag.empty()) {
          series.diverged = true;
          series.diagnostic = fmt::format("model {} diverged at tick {} (optimizer step {}): {}", which, tick,
                                          st.t + 1, diag);
          break;
        }
      }
      if (series.diverged) break;
    }
    if (!series.diverged) {
      for (int which = 1; which <= 2 && !series.diverged; ++which) {
        const Network& net = which == 1 ? net1 : net2;
        if (!net.infer(data.test.batch(pool, net.spec().input_shape)).all_finite()) {
          series.diverged = true;
          series.diagnostic = fmt::format("model {} diverged at tick {}: non-finite logits on the eval pool", which, tick);
        }
      }
    }
    if (!series.diverged) record(tick);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  series.manifest.emplace_back("status", series.diverged ? "diverged" : "completed");
  if (series.diverged) series.manifest.emplace_back("diagnostic", series.diagnostic);
  series.manifest.emplace_back("wall_time_seconds", seconds_text(wall));
  return series;
}

}  // namespace

std::string_view to_string(DatasetSource source) { return source == DatasetSource::cifar ? "cifar" : "synthetic"; }

DatasetSource parse_dataset_source(std::string_view name) {
  if (name == "cifar") return DatasetSource::cifar;
  if (name == "synthetic") return DatasetSource::synthetic;
  throw ConfigError("unknown dataset '" + std::string(name) + "' (expected cifar or synthetic)");
}

RunSeeds seeds_from_base(std::uint64_t base) {
  return {derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3), derive_seed(base, 4),
          derive_seed(base, 5)};
}

void validate(const ExperimentConfig& config) {
  if (!config.allow_shared_seeds) {
    if (config.seeds.model1 == config.seeds.model2) throw ConfigError("model seeds must differ");
    if (config.seeds.shuffle1 == config.seeds.shuffle2) throw ConfigError("shuffle seeds must differ");
  }
  if (!(config.optimizer.lr >= 0.0) || !std::isfinite(config.optimizer.lr)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (config.batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (config.angle_samples == 0) throw ConfigError("angle sample count must be at least 1");
  preset_spec(config.arch1, config.presets);
  preset_spec(config.arch2, config.presets);
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  if (config.source == DatasetSource::synthetic) {
    return {synthetic_noise_dataset(config.synthetic_train, config.synthetic_dim, derive_seed(config.seed_base, 6),
                                    Split::train),
            synthetic_noise_dataset(config.synthetic_test, config.synthetic_dim, derive_seed(config.seed_base, 7),
                                    Split::test)};
  }
  const auto dir = resolve_cifar_dir(config.data_dir);
  if (!dir) {
    throw InputError(std::string("CIFAR-10 binary files not found; pass --data-dir or set ") + kDataDirEnv);
  }
  auto pair = load_cifar10_binary(*dir, config.classes[0], config.classes[1], config.max_train_per_class,
                                  config.max_test_per_class);
  return {std::move(pair.train), std::move(pair.test)};
}

std::vector<std::size_t> eval_pool(const Dataset& test, std::size_t count, std::uint64_t seed) {
  if (test.size() == 0) throw InputError("empty test split");
  Rng rng(seed);
  auto order = permutation(test.size(), rng);
  order.resize(std::min(count, order.size()));
  return order;
}

Manifest config_manifest(const ExperimentConfig& c) {
  Manifest m;
  auto add = [&](std::string key, std::string value) { m.emplace_back(std::move(key), std::move(value)); };
  add("tool_version", kToolVersion);
  add("arch1", c.arch1);
  add("arch2", c.arch2);
  add("fc_shallow_hidden", std::to_string(c.presets.fc_shallow_hidden));
  std::string deep;
  for (std::size_t i = 0; i < c.presets.fc_deep_hidden.size(); ++i) {
    deep += (i ? "," : "") + std::to_string(c.presets.fc_deep_hidden[i]);
  }
  add("fc_deep_hidden", deep);
  add("conv_width_divisor", std::to_string(c.presets.conv_width_divisor));
  add("optimizer", std::string(to_string(c.optimizer.kind)));
  add("lr", fmt::format("{}", c.optimizer.lr));
  add("beta1", fmt::format("{}", c.optimizer.beta1));
  add("beta2", fmt::format("{}", c.optimizer.beta2));
  add("eps", fmt::format("{}", c.optimizer.eps));
  add("momentum", fmt::format("{}", c.optimizer.momentum));
  add("alpha", fmt::format("{}", c.optimizer.alpha));
  add("batch_size", std::to_string(c.batch_size));
  add("steps", std::to_string(c.steps));
  add("epochs", std::to_string(c.epochs));
  add("seed_base", std::to_string(c.seed_base));
  add("seed_model1", std::to_string(c.seeds.model1));
  add("seed_model2", std::to_string(c.seeds.model2));
  add("seed_shuffle1", std::to_string(c.seeds.shuffle1));
  add("seed_shuffle2", std::to_string(c.seeds.shuffle2));
  add("seed_eval", std::to_string(c.seeds.eval));
  add("allow_shared_seeds", c.allow_shared_seeds ? "true" : "false");
  add("dataset", std::string(to_string(c.source)));
  if (c.source == DatasetSource::cifar) {
    add("classes", fmt::format("{},{}", cifar_class_name(c.classes[0]), cifar_class_name(c.classes[1])));
    add("max_train_per_class", std::to_string(c.max_train_per_class));
    add("max_test_per_class", std::to_string(c.max_test_per_class));
    add("preprocessing", "pixels/255");
  } else {
    add("synthetic_train", std::to_string(c.synthetic_train));
    add("synthetic_test", std::to_string(c.synthetic_test));
    add("synthetic_dim", std::to_string(c.synthetic_dim));
  }
  add("adversarial_method", std::string(to_string(c.method)));
  add("angle_samples", std::to_string(c.angle_samples));
  add("eval_pool_split", "test");
  add("accuracy_samples", std::to_string(c.accuracy_samples));
  return m;
}

PairMeasurement measure_pair(const Network& net1, const Network& net2, const Dataset& test,
                             std::span<const std::size_t> pool, AttackMethod method) {
  const auto d1 = adversarial_directions(net1, test, pool, method, 1);
  const auto d2 = adversarial_directions(net2, test, pool, method, 2);
  std::vector<double> angles;
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (d1[i].degenerate || d2[i].degenerate) {
      ++degenerate;
      continue;
    }
    angles.push_back(folded_angle_between(d1[i].values, d2[i].values));
  }
  const AngleStat s = summarize_angles(angles);
  return {s.count ? s.mean : kNaN, s.count ? s.std : kNaN, degenerate};
}

RunSeries run_paired_training(const ExperimentConfig& config, const ExperimentData& data,
                              const TickCallback& on_tick) {
  return run_series(config, data, TickUnit::step, on_tick);
}

RunSeries run_long_term(const ExperimentConfig& config, const ExperimentData& data, const TickCallback& on_tick) {
  return run_series(config, data, TickUnit::epoch, on_tick);
}

CorrelationReport run_update_correlation(const NetworkSpec& spec_a, const NetworkSpec& spec_b,
                                         const Dataset& train, std::size_t batch_size, const RunSeeds& seeds) {
  check_first_layer(spec_a);
  check_first_layer(spec_b);
  if (spec_a.input_shape != spec_b.input_shape) throw ConfigError("both networks must share the input space");
  Network net1(spec_a, seeds.model1), net2(spec_b, seeds.model2);
  BatchPlan plan1(train.size(), batch_size, seeds.shuffle1), plan2(train.size(), batch_size, seeds.shuffle2);
  const Tensor g1 = first_layer_gradient(net1, train, plan1.next());
  const Tensor g2 = first_layer_gradient(net2, train, plan2.next());
  const std::size_t n = g1.dim(1);

  CorrelationReport report;
  std::vector<std::size_t> kept1, kept2;
  const auto u1 = first_layer_rows_unit(g1, report.zero_rows_1, kept1);
  const auto u2 = first_layer_rows_unit(g2, report.zero_rows_2, kept2);
  const std::size_t k1 = kept1.size(), k2 = kept2.size();

  auto within = [&](const std::vector<double>& u, std::size_t k) {
    if (k < 2) return kNaN;
    const auto c = cosine_matrix(u, k, u, k, n);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) total += folded_angle_from_cos(c[i * k + j]);
    }
    return total / static_cast<double>(k * (k - 1) / 2);
  };
  report.within_1 = within(u1, k1);
  report.within_2 = within(u2, k2);
  if (k1 == 0 || k2 == 0) {
    report.between = kNaN;
  } else {
    const auto c = cosine_matrix(u1, k1, u2, k2, n);
    double total = 0.0;
    for (double v : c) total += folded_angle_from_cos(v);
    report.between = total / static_cast<double>(c.size());
  }
  return report;
}

double mean_row_direction_angle(const Tensor& rows, const std::vector<Direction>& directions) {
  std::size_t zero_rows = 0;
  std::vector<std::size_t> kept;
  const auto u = first_layer_rows_unit(rows, zero_rows, kept);
  const std::size_t n = rows.dim(1);
  std::vector<double> d;
  std::size_t kd = 0;
  for (const Direction& dir : directions) {
    if (dir.degenerate) continue;
    if (dir.values.size() != n) throw DimensionError("direction length does not match the weight rows");
    // Sign directions are not unit length; normalize for the cosine.
    const double norm = frobenius(dir.values);
    for (double v : dir.values) d.push_back(v / norm);
    ++kd;
  }
  if (kept.empty() || kd == 0) return kNaN;
  const auto c = cosine_matrix(u, kept.size(), d, kd, n);
  double total = 0.0;
  for (double v : c) total += folded_angle_from_cos(v);
  return total / static_cast<double>(c.size());
}

AlignmentReport run_weight_adversarial_alignment(const NetworkSpec& spec_a, const NetworkSpec& spec_b,
                                                 const ExperimentData& data, const AlignmentConfig& config,
                                                 const RunSeeds& seeds) {
  check_first_layer(spec_a);
  check_first_layer(spec_b);
  if (config.lr && !(*config.lr >= 0.0 && std::isfinite(*config.lr))) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  const auto pool = eval_pool(data.test, config.angle_samples, seeds.eval);
  AlignmentReport report;
  auto one = [&](const NetworkSpec& spec, std::uint64_t model_seed, std::uint64_t shuffle_seed, int id,
                 double& align, double& lr_used, std::size_t& degenerate) {
    Network net(spec, model_seed);
    BatchPlan plan(data.train.size(), config.batch_size, shuffle_seed);
    const Tensor grad = first_layer_gradient(net, data.train, plan.next());
    const double grad_norm = frobenius(grad.values());
    if (grad_norm == 0.0) throw DomainError("model " + std::to_string(id) + " has a zero first-layer update");
    lr_used = config.lr ? *config.lr : config.lr_multiplier * frobenius(net.first_layer_weight().values()) / grad_norm;
    const auto params = net.parameters();
    sgd_step(params, lr_used);
    for (const Tensor* p : params) {
      if (!p->all_finite()) throw DomainError("non-finite parameter after the large step of model " + std::to_string(id));
    }
    net.set_mode(Mode::eval);
    const auto dirs = adversarial_directions(net, data.test, pool, config.method, id);
    degenerate = static_cast<std::size_t>(std::count_if(dirs.begin(), dirs.end(), [](const Direction& d) { return d.degenerate; }));
    align = mean_row_direction_angle(net.first_layer_weight(), dirs);
  };
  one(spec_a, seeds.model1, seeds.shuffle1, 1, report.align_1, report.lr_1, report.degenerate_1);
  one(spec_b, seeds.model2, seeds.shuffle2, 2, report.align_2, report.lr_2, report.degenerate_2);
  return report;
}

}  // namespace etx
