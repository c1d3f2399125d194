// Command-line front end: simulate, train, eval, experiment, gradcheck.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cazsl/data.hpp"
#include "cazsl/error.hpp"
#include "cazsl/eval.hpp"
#include "cazsl/gradcheck.hpp"
#include "cazsl/model.hpp"
#include "cazsl/training.hpp"

namespace fs = std::filesystem;
using namespace cazsl;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out;
};

ExperimentConfig config_or_default(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
}

// Presets follow the dataset's context kind unless a config file overrides them.
TrainConfig train_config_for(const Common& c, const Dataset& data) {
  TrainConfig tc = data.context_kind() == ContextKind::kContinuous
                       ? TrainConfig::regression_preset()
                       : TrainConfig::pushing_preset(data.context_kind());
  if (!c.config.empty()) tc = load_experiment_config(c.config).train;
  if (c.seed) tc.seed = *c.seed;
  if (c.epochs) tc.epochs = *c.epochs;
  tc.validate();
  return tc;
}

std::optional<SplitSetup> parse_split(const std::string& name, int weight_count) {
  if (name.empty()) return std::nullopt;
  if (name == "different-objects") return SplitSetup::different_objects();
  if (name == "different-surfaces") return SplitSetup::different_surfaces();
  if (name == "different-weights") return SplitSetup::different_weights(weight_count);
  throw ConfigError("unknown split '" + name + "'");
}

Dataset select_partition(const Dataset& data, const std::string& split, int weight_count,
                         std::uint64_t seed, bool want_test) {
  const auto setup = parse_split(split, weight_count);
  if (!setup) return data;
  Rng rng(derive_seed(seed, 200));
  Split s = split_setup(data, *setup, rng);
  return want_test ? s.test : s.train;
}

int run_simulate(const Common& c, std::size_t tasks, std::size_t per_task) {
  if (c.out.empty()) throw ConfigError("simulate needs --out");
  Rng rng(c.seed.value_or(0));
  const Dataset data = simulate_gp_dataset(rng, tasks, per_task);
  write_dataset(data, c.out);
  std::cout << "wrote " << data.size() << " samples from " << tasks << " tasks to " << c.out
            << "\n";
  return 0;
}

int run_train(const Common& c, const std::string& data_path, const std::string& variant,
              const std::string& split, int weight_count, const std::string& trace_path,
              std::size_t checkpoint_every, const std::string& context) {
  if (c.out.empty()) throw ConfigError("train needs --out");
  std::optional<ContextKind> kind;
  if (!context.empty()) kind = parse_context_kind(context);
  const Dataset all = load_push_dataset(data_path, kind);
  const std::uint64_t seed = c.seed.value_or(0);
  const Dataset data = select_partition(all, split, weight_count, seed, false);
  TrainConfig tc = train_config_for(c, data);
  tc.checkpoint_every = checkpoint_every;
  if (checkpoint_every) tc.checkpoint_dir = fs::path(c.out).parent_path();
  ExperimentConfig ec = config_or_default(c);
  ec.train = tc;
  const ModelSpec spec = experiment_model_spec(ec, parse_variant(variant), data);
  const TrainResult result = train(spec, data, tc);
  save_checkpoint(c.out, result.store, &spec);
  if (!trace_path.empty()) write_loss_trace_csv(result.trace, fs::path(trace_path));
  const EpochStats& first = result.trace.front();
  const EpochStats& last = result.trace.back();
  std::cout << to_string(spec.variant) << ": " << tc.epochs << " epochs, loss "
            << first.mean_loss << " -> " << last.mean_loss << ", checkpoint " << c.out << "\n";
  return 0;
}

int run_eval(const Common& c, const std::string& checkpoint, const std::string& data_path,
             const std::string& split, int weight_count) {
  const Checkpoint cp = load_checkpoint(checkpoint);
  if (!cp.spec) throw DataError("checkpoint " + checkpoint + " carries no model description");
  const Dataset all = load_push_dataset(data_path, cp.spec->context_kind);
  const Dataset test = select_partition(all, split, weight_count, c.seed.value_or(0), true);
  const Metrics m = evaluate(*cp.spec, cp.store, test);
  std::cout << "variant " << to_string(cp.spec->variant) << "\n"
            << "samples " << test.size() << "\n"
            << "rmse " << m.rmse << "\n"
            << "std " << m.std << "\n";
  if (test.context_kind() != ContextKind::kContinuous)
    std::cout << "dist_mm " << rmse_to_mm(m.rmse) << "\n";
  return 0;
}

int run_experiment_cmd(const Common& c, const std::vector<std::string>& variants,
                       std::optional<std::size_t> n_seeds, std::optional<std::size_t> jobs) {
  ExperimentConfig cfg = config_or_default(c);
  if (c.epochs) cfg.train.epochs = *c.epochs;
  if (!variants.empty()) {
    cfg.variants.clear();
    for (const auto& v : variants) cfg.variants.push_back(parse_variant(v));
  }
  if (c.seed || n_seeds) {
    const std::uint64_t base = c.seed.value_or(0);
    const std::size_t n = n_seeds.value_or(c.seed ? 1 : cfg.seeds.size());
    cfg.seeds.clear();
    for (std::size_t i = 0; i < n; ++i) cfg.seeds.push_back(base + i);
  }
  if (jobs) cfg.jobs = *jobs;
  if (!c.out.empty()) cfg.output_dir = c.out;
  const ExperimentResult result = run_experiment(cfg);
  std::cout << result.table;
  if (!cfg.output_dir.empty())
    std::cout << "reports written to " << cfg.output_dir.string() << "\n";
  return 0;
}

int run_gradcheck(const Common& c, std::size_t n_seeds, bool verbose) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(c.seed.value_or(0) + i);
  const GradCheckReport report = run_gradcheck_suite(seeds);
  std::cout << format_report(report, verbose);
  if (!c.out.empty()) {
    std::ofstream out = open_for_write(c.out);
    out << format_report(report, true);
  }
  return report.passed() ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware zero-shot regression: training and evaluation"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Experiment config (JSON)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Random seed");
    sub->add_option("--epochs", common.epochs, "Override the number of epochs");
    sub->add_option("--out", common.out, "Output path");
  };

  std::size_t tasks = 200, per_task = 20;
  auto* simulate = app.add_subcommand("simulate", "Write a simulated GP dataset (JSON lines)");
  add_common(simulate);
  simulate->add_option("--tasks", tasks, "Number of GP tasks");
  simulate->add_option("--samples-per-task", per_task, "Windows per task");

  std::string data_path, variant = "FCN+CM+L2Reg", split, trace_path, checkpoint, context;
  int weight_count = 0;
  std::size_t checkpoint_every = 0;
  auto* trainc = app.add_subcommand("train", "Train one variant and save a checkpoint");
  add_common(trainc);
  trainc->add_option("--data", data_path, "Dataset (JSON lines)")->required();
  trainc->add_option("--variant", variant, "Model variant");
  trainc->add_option("--split", split,
                     "Train on the train side of different-objects|different-surfaces|"
                     "different-weights");
  trainc->add_option("--weight-count", weight_count, "Held-out weight count (0-2)");
  trainc->add_option("--trace", trace_path, "Write the per-epoch loss CSV here");
  trainc->add_option("--checkpoint-every", checkpoint_every, "Save every N epochs");
  trainc->add_option("--context", context,
                     "Context to read from pushing records: indicator|visual");

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset or split");
  add_common(evalc);
  evalc->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evalc->add_option("--data", data_path, "Dataset (JSON lines)")->required();
  evalc->add_option("--split", split, "Evaluate on the test side of this split");
  evalc->add_option("--weight-count", weight_count, "Held-out weight count (0-2)");

  std::vector<std::string> variants;
  std::optional<std::size_t> n_seeds, jobs;
  auto* experiment = app.add_subcommand("experiment", "Run a full comparison table");
  add_common(experiment);
  experiment->add_option("--variant", variants, "Restrict to these variants");
  experiment->add_option("--seeds", n_seeds, "Number of consecutive seeds from --seed");
  experiment->add_option("--jobs", jobs, "Worker threads");

  std::size_t grad_seeds = 20;
  bool verbose = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(gradcheck);
  gradcheck->add_option("--seeds", grad_seeds, "Number of seeds");
  gradcheck->add_flag("--verbose", verbose, "List every failing check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return run_simulate(common, tasks, per_task);
    if (*trainc)
      return run_train(common, data_path, variant, split, weight_count, trace_path,
                       checkpoint_every, context);
    if (*evalc) return run_eval(common, checkpoint, data_path, split, weight_count);
    if (*experiment) return run_experiment_cmd(common, variants, n_seeds, jobs);
    if (*gradcheck) return run_gradcheck(common, grad_seeds, verbose);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorCategory::kNumeric);
  }
  return 0;
}
