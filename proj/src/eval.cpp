#include "cazsl/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace cazsl {

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kGpRegression: return "gp-regression";
    case ExperimentKind::kPushDifferentObjects: return "push-different-objects";
    case ExperimentKind::kPushDifferentSurfaces: return "push-different-surfaces";
    case ExperimentKind::kPushDifferentWeights: return "push-different-weights";
  }
  return "?";
}

ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::kGpRegression, ExperimentKind::kPushDifferentObjects,
                 ExperimentKind::kPushDifferentSurfaces, ExperimentKind::kPushDifferentWeights})
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown experiment '" + s + "'");
}

ErrorCategory category_of(const std::exception& e) {
  if (auto* err = dynamic_cast<const Error*>(&e)) return err->category();
  return ErrorCategory::kNumeric;
}

SplitSetup split_for(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::kPushDifferentSurfaces:
      return SplitSetup::different_surfaces();
    case ExperimentKind::kPushDifferentWeights:
      return SplitSetup::different_weights(cfg.weight_count);
    default: {
      SplitSetup s = SplitSetup::different_objects();
      s.test_objects = cfg.test_objects;
      return s;
    }
  }
}

// Rows keep only samples whose context matches the requested kind.
Dataset select_context(const Dataset& data, ContextKind kind) {
  if (data.context_kind() != kind)
    throw ConfigError("dataset " + data.provenance() + " carries " +
                      to_string(data.context_kind()) + " contexts, experiment asks for " +
                      to_string(kind));
  return data;
}

}  // namespace

// ---- metrics --------------------------------------------------------------

double rmse(std::span<const Tensor> preds, std::span<const Tensor> targets) {
  if (preds.empty()) throw ContractError("rmse of an empty prediction list");
  if (preds.size() != targets.size())
    throw ContractError("rmse: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(targets.size()) + " targets");
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != targets[i].size())
      throw ContractError("rmse: dimension mismatch at sample " + std::to_string(i));
    for (std::size_t d = 0; d < preds[i].size(); ++d) {
      const double e = preds[i][d] - targets[i][d];
      sq += e * e;
    }
    n += preds[i].size();
  }
  return std::sqrt(sq / static_cast<double>(n));
}

double rmse(const Tensor& preds, const Tensor& targets) {
  if (preds.shape() != targets.shape())
    throw ContractError("rmse: shapes " + shape_string(preds.shape()) + " and " +
                        shape_string(targets.shape()) + " differ");
  double sq = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - targets[i];
    sq += e * e;
  }
  return std::sqrt(sq / static_cast<double>(preds.size()));
}

double mean_predicted_std(std::span<const GaussianPrediction> preds) {
  if (preds.empty()) throw ContractError("mean_predicted_std of an empty list");
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& p : preds) {
    for (double v : p.std.data()) s += v;
    n += p.std.size();
  }
  return s / static_cast<double>(n);
}

double rmse_to_mm(double value) {
  if (!(value >= 0.0)) throw RangeError("rmse_to_mm needs a non-negative rmse");
  return value * kMillimetresPerUnit;
}

Metrics evaluate(const ModelSpec& spec, const ad::ParameterStore& store, const Dataset& test) {
  const GaussianPrediction pred = model::predict(spec, store, test.inputs(), test.contexts());
  const GaussianPrediction preds[] = {pred};
  return {rmse(pred.mean, test.targets()), mean_predicted_std(preds)};
}

// ---- config ---------------------------------------------------------------

std::string ExperimentConfig::name() const {
  std::string n = kind_name(kind);
  if (kind == ExperimentKind::kPushDifferentWeights) n += "(" + std::to_string(weight_count) + ")";
  if (is_push()) n += "/" + to_string(push_context);
  return n;
}

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("experiment needs at least one variant");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  train.validate();
  if (is_push()) {
    if (data_path.empty()) throw ConfigError("push experiments require a data path");
    if (push_context == ContextKind::kContinuous)
      throw ConfigError("push experiments use indicator or visual contexts");
  } else if (train_tasks == 0 || test_tasks == 0 || samples_per_task == 0) {
    throw ConfigError("gp-regression requires positive simulator sizes");
  }
  if (kind == ExperimentKind::kPushDifferentWeights && (weight_count < 0 || weight_count > 2))
    throw ConfigError("weight_count must be 0, 1 or 2");
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["experiment"] = kind_name(cfg.kind);
  if (cfg.kind == ExperimentKind::kPushDifferentWeights) j["weight_count"] = cfg.weight_count;
  std::vector<std::string> variants;
  for (Variant v : cfg.variants) variants.push_back(to_string(v));
  j["variants"] = variants;
  j["train"] = train_config_to_json(cfg.train);
  j["train"].erase("seed");
  j["seeds"] = cfg.seeds;
  j["hidden"] = cfg.hidden;
  if (cfg.is_push()) {
    j["push"] = {{"data", cfg.data_path.string()},
                 {"context", to_string(cfg.push_context)},
                 {"test_objects", cfg.test_objects}};
  } else {
    j["gp"] = {{"train_tasks", cfg.train_tasks},
               {"test_tasks", cfg.test_tasks},
               {"samples_per_task", cfg.samples_per_task}};
  }
  j["output_dir"] = cfg.output_dir.string();
  j["jobs"] = cfg.jobs;
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  try {
    ExperimentConfig cfg;
    cfg.kind = parse_kind(j.value("experiment", std::string("gp-regression")));
    cfg.weight_count = j.value("weight_count", 0);
    if (j.contains("push")) {
      const auto& p = j["push"];
      cfg.data_path = p.value("data", std::string());
      cfg.push_context = parse_context_kind(p.value("context", std::string("indicator")));
      cfg.test_objects = p.value("test_objects", std::vector<std::string>{});
    }
    cfg.train = cfg.is_push() ? TrainConfig::pushing_preset(cfg.push_context)
                              : TrainConfig::regression_preset();
    if (j.contains("train")) cfg.train = train_config_from_json(j["train"], cfg.train);
    if (j.contains("variants")) {
      cfg.variants.clear();
      for (const auto& v : j["variants"]) cfg.variants.push_back(parse_variant(v.get<std::string>()));
    }
    if (j.contains("seeds")) {
      cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    } else if (j.contains("num_seeds")) {
      const auto n = j["num_seeds"].get<std::size_t>();
      const auto base = j.value("base_seed", std::uint64_t{0});
      cfg.seeds.clear();
      for (std::size_t i = 0; i < n; ++i) cfg.seeds.push_back(base + i);
    }
    if (j.contains("hidden")) cfg.hidden = j["hidden"].get<std::array<std::size_t, 4>>();
    if (j.contains("gp")) {
      const auto& g = j["gp"];
      cfg.train_tasks = g.value("train_tasks", cfg.train_tasks);
      cfg.test_tasks = g.value("test_tasks", cfg.test_tasks);
      cfg.samples_per_task = g.value("samples_per_task", cfg.samples_per_task);
    }
    cfg.output_dir = j.value("output_dir", std::string());
    cfg.jobs = j.value("jobs", std::size_t{1});
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return experiment_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

// ---- running --------------------------------------------------------------

ExperimentError::ExperimentError(ErrorCategory category, std::string stage, std::string variant,
                                 std::uint64_t seed, const std::string& cause)
    : Error(category, "[stage=" + stage + " variant=" + variant + " seed=" +
                          std::to_string(seed) + "] " + cause),
      stage_(std::move(stage)),
      variant_(std::move(variant)),
      seed_(seed) {}

Split experiment_data(const ExperimentConfig& cfg, std::uint64_t seed, const Dataset* push_data) {
  if (!cfg.is_push()) {
    Rng rng(derive_seed(seed, 100));
    Dataset train = simulate_gp_dataset(rng, cfg.train_tasks, cfg.samples_per_task, Role::kTrain);
    Dataset test = simulate_gp_dataset(rng, cfg.test_tasks, cfg.samples_per_task, Role::kTest);
    return {std::move(train), std::move(test)};
  }
  if (!push_data) throw ContractError("push experiment data not loaded");
  Rng rng(derive_seed(seed, 200));
  return split_setup(*push_data, split_for(cfg), rng);
}

ModelSpec experiment_model_spec(const ExperimentConfig& cfg, Variant variant,
                                const Dataset& train) {
  ModelSpec spec = ModelSpec::make(variant, train.context_kind(), train.context_dim(),
                                   train.input_dim(), train.output_dim(), cfg.train.lambda1,
                                   cfg.train.lambda2);
  spec.hidden = cfg.hidden;
  spec.validate();
  return spec;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string name = cfg.name();
  std::optional<Dataset> push_data;
  if (cfg.is_push()) {
    try {
      push_data = select_context(load_push_dataset(cfg.data_path, cfg.push_context), cfg.push_context);
    } catch (const std::exception& e) {
      throw ExperimentError(category_of(e), "load", "-", 0, e.what());
    }
  }

  // Data per seed is shared by every variant so comparisons are paired.
  std::vector<Split> splits;
  splits.reserve(cfg.seeds.size());
  for (std::uint64_t seed : cfg.seeds) {
    try {
      splits.push_back(experiment_data(cfg, seed, push_data ? &*push_data : nullptr));
    } catch (const std::exception& e) {
      throw ExperimentError(category_of(e), cfg.is_push() ? "split" : "simulate", "-", seed,
                            e.what());
    }
  }

  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_cells = cfg.variants.size() * n_seeds;
  std::vector<SeedMetrics> cells(n_cells);
  std::vector<std::exception_ptr> errors(n_cells);

  auto run_cell = [&](std::size_t cell) {
    const Variant variant = cfg.variants[cell / n_seeds];
    const std::size_t s = cell % n_seeds;
    const std::uint64_t seed = cfg.seeds[s];
    const Split& split = splits[s];
    std::string stage = "build";
    try {
      const ModelSpec spec = experiment_model_spec(cfg, variant, split.train);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      tc.tag = cfg.train.tag + "-" + to_string(variant) + "-seed" + std::to_string(seed);
      if (!cfg.train.checkpoint_dir.empty()) tc.checkpoint_dir = cfg.train.checkpoint_dir;
      stage = "train";
      const TrainResult trained = train(spec, split.train, tc);
      stage = "evaluate";
      const Metrics m = evaluate(spec, trained.store, split.test);
      cells[cell] = {seed, m.rmse, m.std};
    } catch (const std::exception& e) {
      errors[cell] = std::make_exception_ptr(
          ExperimentError(category_of(e), stage, to_string(variant), seed, e.what()));
    }
  };

  if (cfg.jobs <= 1) {
    for (std::size_t c = 0; c < n_cells; ++c) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const std::size_t n_workers = std::min(cfg.jobs, n_cells);
    for (std::size_t w = 0; w < n_workers; ++w)
      workers.emplace_back([&] {
        for (std::size_t c = next++; c < n_cells; c = next++) run_cell(c);
      });
    for (auto& t : workers) t.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  ExperimentResult result;
  result.experiment = name;
  for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
    MetricReport report;
    report.variant = to_string(cfg.variants[v]);
    for (std::size_t s = 0; s < n_seeds; ++s) report.per_seed.push_back(cells[v * n_seeds + s]);
    for (const auto& m : report.per_seed) {
      report.rmse += m.rmse;
      report.std += m.std;
    }
    report.rmse /= static_cast<double>(n_seeds);
    report.std /= static_cast<double>(n_seeds);
    if (cfg.is_push()) report.dist_mm = rmse_to_mm(report.rmse);
    result.reports.push_back(std::move(report));
  }
  result.table = render_table(name, result.reports, cfg.is_push(), n_seeds);
  result.csv = render_csv(name, result.reports);
  result.json = report_json(name, result.reports);
  result.json["config"] = experiment_config_to_json(cfg);
  if (!cfg.output_dir.empty()) write_experiment_outputs(result, cfg.output_dir);
  return result;
}

// ---- rendering ------------------------------------------------------------

std::string render_table(const std::string& experiment, const std::vector<MetricReport>& reports,
                         bool with_mm, std::size_t n_seeds) {
  // Best RMSE at printed precision; ties are all marked.
  std::string best;
  double best_value = INFINITY;
  for (const auto& r : reports) best_value = std::min(best_value, r.rmse);
  best = fixed(best_value, 3);

  std::size_t name_w = std::string("Variant").size();
  for (const auto& r : reports) name_w = std::max(name_w, r.variant.size());

  std::ostringstream os;
  os << experiment << " (mean over " << n_seeds << " seed" << (n_seeds == 1 ? "" : "s")
     << "; ** marks the best RMSE)\n";
  auto row = [&](const std::string& a, const std::string& b, const std::string& c,
                 const std::string& d) {
    os << "| " << std::left << std::setw(static_cast<int>(name_w)) << a << " | "
       << std::setw(9) << b << " | " << std::setw(6) << c;
    if (with_mm) os << " | " << std::setw(10) << d;
    os << " |\n";
  };
  row("Variant", "RMSE", "STD", "Dist. (mm)");
  os << "|" << std::string(name_w + 2, '-') << "|" << std::string(11, '-') << "|"
     << std::string(8, '-');
  if (with_mm) os << "|" << std::string(12, '-');
  os << "|\n";
  for (const auto& r : reports) {
    std::string value = fixed(r.rmse, 3);
    if (value == best) value = "**" + value + "**";
    row(r.variant, value, fixed(r.std, 3), r.dist_mm ? fixed(*r.dist_mm, 2) : "");
  }
  return os.str();
}

std::string render_csv(const std::string& experiment, const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "experiment,variant,seed,rmse,std,dist_mm\n";
  auto line = [&](const std::string& variant, const std::string& seed, double r, double s,
                  bool mm) {
    os << experiment << ',' << variant << ',' << seed << ',' << fixed(r, 6) << ','
       << fixed(s, 6) << ',' << (mm ? fixed(rmse_to_mm(r), 6) : "") << '\n';
  };
  for (const auto& r : reports) {
    for (const auto& m : r.per_seed)
      line(r.variant, std::to_string(m.seed), m.rmse, m.std, r.dist_mm.has_value());
    line(r.variant, "mean", r.rmse, r.std, r.dist_mm.has_value());
  }
  return os.str();
}

nlohmann::json report_json(const std::string& experiment,
                           const std::vector<MetricReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& m : r.per_seed) {
      nlohmann::json s{{"seed", m.seed}, {"rmse", m.rmse}, {"std", m.std}};
      if (r.dist_mm) s["dist_mm"] = rmse_to_mm(m.rmse);
      per_seed.push_back(s);
    }
    nlohmann::json row{{"variant", r.variant}, {"rmse", r.rmse}, {"std", r.std},
                       {"per_seed", per_seed}};
    if (r.dist_mm) row["dist_mm"] = *r.dist_mm;
    rows.push_back(row);
  }
  return {{"experiment", experiment},
          {"aggregation", "arithmetic mean of per-seed metrics"},
          {"reports", rows}};
}

void write_experiment_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* file, const std::string& text) {
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / file).string());
    out << text;
  };
  write("report.csv", result.csv);
  write("report.json", result.json.dump(2) + "\n");
  write("table.txt", result.table);
}

}  // namespace cazsl
