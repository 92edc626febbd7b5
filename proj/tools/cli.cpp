#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "etx/error.hpp"
#include "etx/experiments.hpp"
#include "etx/geometry.hpp"
#include "etx/report.hpp"

namespace etx::cli {

namespace {

constexpr const char* kClassTable =
    "CIFAR-10 classes: airplane=0 automobile=1 bird=2 cat=3 deer=4 dog=5 frog=6 horse=7 ship=8 truck=9";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::array<int, 2> parse_classes(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("--classes expects two names, e.g. cat,dog");
  try {
    return {cifar_class_id(text.substr(0, comma)), cifar_class_id(text.substr(comma + 1))};
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
}

// Flags shared by every subcommand that trains networks.
struct RunFlags {
  std::string arch1 = "fc_deep";
  std::string arch2 = "fc_deep";
  std::string optimizer = "adam";
  double lr = 1e-2;
  std::size_t batch_size = 128;
  std::size_t steps = 30;
  std::size_t epochs = 15;
  std::string dataset = "cifar";
  std::string classes = "cat,dog";
  std::uint64_t seed_base = 0;
  std::string data_dir;
  std::string method = "grad";
  std::size_t angle_samples = 100;
  std::size_t accuracy_samples = 0;
  std::size_t max_train_per_class = 2000;
  std::size_t max_test_per_class = 0;
  std::size_t synthetic_train = 4000;
  std::size_t synthetic_test = 1000;
  std::size_t fc_shallow_hidden = 100;
  std::vector<std::size_t> fc_deep_hidden{512, 256, 128, 64};
  std::size_t conv_width_divisor = 1;
  bool twin = false;
  std::string out;
  std::string svg;
};

void add_model_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--arch1", f.arch1, "Architecture of model 1 (fc_shallow, fc_deep, conv_a, conv_b)")
      ->capture_default_str();
  cmd->add_option("--arch2", f.arch2, "Architecture of model 2")->capture_default_str();
  cmd->add_option("--fc-shallow-hidden", f.fc_shallow_hidden, "Hidden width of fc_shallow")->capture_default_str();
  cmd->add_option("--fc-deep-hidden", f.fc_deep_hidden, "Hidden widths of fc_deep")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--conv-width-divisor", f.conv_width_divisor, "Divides every conv channel count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

void add_data_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--dataset", f.dataset, "cifar or synthetic")
      ->check(CLI::IsMember({"cifar", "synthetic"}))
      ->capture_default_str();
  cmd->add_option("--classes", f.classes, std::string("Two CIFAR-10 classes by name or id. ") + kClassTable)
      ->capture_default_str();
  cmd->add_option("--data-dir", f.data_dir,
                  std::string("Directory with the CIFAR-10 binary files (fallback: $") + kDataDirEnv + ")");
  cmd->add_option("--max-train-per-class", f.max_train_per_class, "CIFAR training samples per class (0 = all)")
      ->capture_default_str();
  cmd->add_option("--max-test-per-class", f.max_test_per_class, "CIFAR test samples per class (0 = all)")
      ->capture_default_str();
  cmd->add_option("--synthetic-train", f.synthetic_train, "Synthetic training samples (even)")->capture_default_str();
  cmd->add_option("--synthetic-test", f.synthetic_test, "Synthetic test samples (even)")->capture_default_str();
  cmd->add_option("--seed-base", f.seed_base,
                  "Base seed; model1=h(b,1) model2=h(b,2) shuffle1=h(b,3) shuffle2=h(b,4) eval=h(b,5)")
      ->capture_default_str();
}

void add_series_flags(CLI::App* cmd, RunFlags& f) {
  add_model_flags(cmd, f);
  add_data_flags(cmd, f);
  cmd->add_option("--optimizer", f.optimizer, "sgd, momentum, rmsprop or adam")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--batch-size", f.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--method", f.method, "Adversarial direction: grad or sign")
      ->check(CLI::IsMember({"grad", "sign"}))
      ->capture_default_str();
  cmd->add_option("--angle-samples", f.angle_samples, "Test samples in the angle pool")->capture_default_str();
  cmd->add_option("--accuracy-samples", f.accuracy_samples, "Test samples scored for accuracy (0 = all)")
      ->capture_default_str();
  cmd->add_flag("--twin", f.twin, "Give model 2 the seeds of model 1 (identical-twin control)");
  cmd->add_option("--out", f.out, "Series CSV path; the manifest is written next to it")->required();
  cmd->add_option("--svg", f.svg, "Also write a three-panel SVG chart");
}

PresetOptions presets_from(const RunFlags& f) {
  PresetOptions p;
  p.fc_shallow_hidden = f.fc_shallow_hidden;
  p.fc_deep_hidden = f.fc_deep_hidden;
  p.conv_width_divisor = f.conv_width_divisor;
  return p;
}

ExperimentConfig config_from(const RunFlags& f) {
  ExperimentConfig c;
  c.arch1 = f.arch1;
  c.arch2 = f.arch2;
  c.presets = presets_from(f);
  c.optimizer.kind = parse_optimizer_kind(f.optimizer);
  c.optimizer.lr = f.lr;
  c.batch_size = f.batch_size;
  c.steps = f.steps;
  c.epochs = f.epochs;
  c.seed_base = f.seed_base;
  c.seeds = seeds_from_base(f.seed_base);
  if (f.twin) {
    c.seeds.model2 = c.seeds.model1;
    c.seeds.shuffle2 = c.seeds.shuffle1;
    c.allow_shared_seeds = true;
  }
  c.source = parse_dataset_source(f.dataset);
  c.classes = parse_classes(f.classes);
  if (!f.data_dir.empty()) c.data_dir = f.data_dir;
  c.max_train_per_class = f.max_train_per_class;
  c.max_test_per_class = f.max_test_per_class;
  c.synthetic_train = f.synthetic_train;
  c.synthetic_test = f.synthetic_test;
  c.method = parse_attack_method(f.method);
  c.angle_samples = f.angle_samples;
  c.accuracy_samples = f.accuracy_samples;
  if (c.source == DatasetSource::synthetic && (f.synthetic_train % 2 || f.synthetic_test % 2)) {
    throw ConfigError("synthetic sample counts must be even");
  }
  validate(c);
  return c;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path);
  return f;
}

void write_manifest_file(const std::string& csv, const std::string& command, Manifest m, const std::string& started,
                         const std::vector<std::string>& outputs) {
  m.insert(m.begin(), {"command", command});
  m.emplace_back("started_utc", started);
  m.emplace_back("finished_utc", utc_now());
  std::string joined;
  for (std::size_t i = 0; i < outputs.size(); ++i) joined += (i ? "," : "") + outputs[i];
  m.emplace_back("outputs", joined);
  auto f = open_out(manifest_path_for(csv).string());
  write_manifest(f, m);
}

int run_series_command(const std::string& command, const RunFlags& f, std::ostream& out, std::ostream& err) {
  const ExperimentConfig config = config_from(f);
  const std::string started = utc_now();
  const ExperimentData data = load_experiment_data(config);
  auto csv = open_out(f.out);
  write_series_header(csv);
  csv.flush();
  auto on_tick = [&](const TickRecord& t) {
    write_tick(csv, t);
    csv.flush();
  };
  const RunSeries series =
      command == "pair" ? run_paired_training(config, data, on_tick) : run_long_term(config, data, on_tick);
  std::vector<std::string> outputs{f.out, manifest_path_for(f.out).string()};
  if (!f.svg.empty()) {
    emit_svg(series, f.svg, fmt::format("{} vs {} ({}, lr {})", config.arch1, config.arch2, f.optimizer, f.lr));
    outputs.push_back(f.svg);
  }
  write_manifest_file(f.out, command, series.manifest, started, outputs);
  if (series.diverged) {
    err << "etx " << command << ": " << series.diagnostic << '\n';
    return kExitRuntime;
  }
  out << "wrote " << f.out << " (" << series.ticks.size() << " ticks)\n";
  return kExitOk;
}

struct PairwiseFlags {
  RunFlags run;
  std::size_t batch_size = 30;
  double lr_multiplier = 1e3;
  std::optional<double> lr;
  std::string out;
};

void emit_csv(const std::string& path, std::ostream& out, const std::function<void(std::ostream&)>& write) {
  if (path.empty()) {
    write(out);
    return;
  }
  auto f = open_out(path);
  write(f);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Measures how early adversarial directions of independently trained networks align."};
  app.require_subcommand(1);
  app.footer(std::string(kClassTable) + "\nExit codes: 0 success, 1 runtime failure, 2 usage error.");

  RunFlags pair_flags;
  auto* pair = app.add_subcommand("pair", "Paired step-by-step training; one CSV row per optimizer step");
  add_series_flags(pair, pair_flags);
  pair->add_option("--steps", pair_flags.steps, "Steps after tick 0")->capture_default_str();

  RunFlags long_flags;
  long_flags.arch1 = long_flags.arch2 = "conv_b";
  long_flags.conv_width_divisor = 16;
  auto* longterm = app.add_subcommand("longterm", "Paired epoch-scale training; one CSV row per epoch");
  add_series_flags(longterm, long_flags);
  longterm->add_option("--epochs", long_flags.epochs, "Epochs after tick 0")->capture_default_str();

  PairwiseFlags corr_flags;
  corr_flags.run.arch1 = corr_flags.run.arch2 = "fc_shallow";
  auto* correlate = app.add_subcommand("correlate", "Angles between first-layer update rows after one backward pass");
  add_model_flags(correlate, corr_flags.run);
  add_data_flags(correlate, corr_flags.run);
  correlate->add_option("--batch-size", corr_flags.batch_size, "Batch size of the single pass")->capture_default_str();
  correlate->add_option("--out", corr_flags.out, "CSV path (default: stdout)");

  PairwiseFlags align_flags;
  align_flags.run.arch1 = align_flags.run.arch2 = "fc_shallow";
  auto* align = app.add_subcommand("align", "Angles between first-layer weight rows and adversarial directions "
                                            "after one large SGD step");
  add_model_flags(align, align_flags.run);
  add_data_flags(align, align_flags.run);
  align->add_option("--batch-size", align_flags.batch_size, "Batch size of the single step")->capture_default_str();
  align->add_option("--lr-multiplier", align_flags.lr_multiplier,
                    "lr = multiplier * |initial first-layer weights| / |first-layer update|")
      ->capture_default_str();
  align->add_option("--lr", align_flags.lr, "Explicit learning rate (overrides --lr-multiplier)");
  align->add_option("--method", align_flags.run.method, "Adversarial direction: grad or sign")
      ->check(CLI::IsMember({"grad", "sign"}))
      ->capture_default_str();
  align->add_option("--angle-samples", align_flags.run.angle_samples, "Adversarial directions per model")
      ->capture_default_str();
  align->add_option("--out", align_flags.out, "CSV path (default: stdout)");

  std::vector<double> dims;
  std::vector<double> markov;
  std::size_t monte_carlo = 0;
  double dim = 3072;
  double p_norm = 2.0;
  std::uint64_t geo_seed = 0;
  std::string geo_out;
  auto* geometry = app.add_subcommand("geometry", "Angles between random unit vectors: expected angle per "
                                                  "dimension, Markov bounds or a Monte-Carlo run");
  auto* dims_opt = geometry->add_option("--dims", dims, "Dimensions for the expected-angle table")->delimiter(',');
  auto* markov_opt = geometry->add_option("--markov", markov, "Markov factors t for the bound table")->delimiter(',');
  auto* mc_opt = geometry->add_option("--monte-carlo", monte_carlo, "Number of random pairs")->check(CLI::PositiveNumber);
  dims_opt->excludes(markov_opt)->excludes(mc_opt);
  markov_opt->excludes(mc_opt);
  geometry->add_option("--dim", dim, "Dimension for --markov and --monte-carlo")->capture_default_str();
  geometry->add_option("--p", p_norm, "Norm order of the expected-angle table")->capture_default_str();
  geometry->add_option("--seed", geo_seed, "Monte-Carlo seed")->capture_default_str();
  geometry->add_option("--out", geo_out, "CSV path (default: stdout)");

  std::vector<std::string> argv_storage{"etx"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (pair->parsed()) return run_series_command("pair", pair_flags, out, err);
    if (longterm->parsed()) return run_series_command("longterm", long_flags, out, err);
    if (correlate->parsed()) {
      ExperimentConfig c = config_from(corr_flags.run);
      const ExperimentData data = load_experiment_data(c);
      const auto report = run_update_correlation(preset_spec(c.arch1, c.presets), preset_spec(c.arch2, c.presets),
                                                 data.train, corr_flags.batch_size, c.seeds);
      emit_csv(corr_flags.out, out, [&](std::ostream& s) { write_correlation_csv(s, report); });
      return kExitOk;
    }
    if (align->parsed()) {
      ExperimentConfig c = config_from(align_flags.run);
      const ExperimentData data = load_experiment_data(c);
      AlignmentConfig ac;
      ac.lr_multiplier = align_flags.lr_multiplier;
      ac.lr = align_flags.lr;
      ac.batch_size = align_flags.batch_size;
      ac.angle_samples = c.angle_samples;
      ac.method = c.method;
      if (ac.lr && !(*ac.lr >= 0.0)) throw ConfigError("--lr must be non-negative");
      const auto report = run_weight_adversarial_alignment(preset_spec(c.arch1, c.presets),
                                                           preset_spec(c.arch2, c.presets), data, ac, c.seeds);
      emit_csv(align_flags.out, out, [&](std::ostream& s) { write_alignment_csv(s, report); });
      return kExitOk;
    }
    if (geometry->parsed()) {
      if (dim < 1 || p_norm < 1) throw ConfigError("--dim and --p must be at least 1");
      if (!markov.empty()) {
        for (double t : markov) {
          if (t < 1 || t > dim) throw ConfigError("--markov factors must lie in [1, --dim]");
        }
        emit_csv(geo_out, out, [&](std::ostream& s) { write_markov_table(s, markov, dim); });
      } else if (monte_carlo > 0) {
        const auto stat = empirical_angle_stats(static_cast<std::size_t>(dim), monte_carlo, geo_seed);
        emit_csv(geo_out, out, [&](std::ostream& s) { write_monte_carlo_row(s, static_cast<std::size_t>(dim), stat); });
      } else {
        if (dims.empty()) dims = {2, 16, 128, 784, 3072, 196608};
        for (double n : dims) {
          if (n < 1) throw ConfigError("--dims entries must be at least 1");
        }
        emit_csv(geo_out, out, [&](std::ostream& s) { write_dimension_table(s, dims, p_norm); });
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "etx: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "etx: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace etx::cli
