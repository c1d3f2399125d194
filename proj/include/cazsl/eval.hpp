#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cazsl/data.hpp"
#include "cazsl/error.hpp"
#include "cazsl/model.hpp"
#include "cazsl/training.hpp"

namespace cazsl {

inline constexpr double kMillimetresPerUnit = 21.92;

/// sqrt of the mean squared error over all samples and output dimensions.
double rmse(std::span<const Tensor> preds, std::span<const Tensor> targets);
double rmse(const Tensor& preds, const Tensor& targets);
/// Mean of every predicted std entry.
double mean_predicted_std(std::span<const GaussianPrediction> preds);
double rmse_to_mm(double rmse);

struct SeedMetrics {
  std::uint64_t seed = 0;
  double rmse = 0.0;
  double std = 0.0;
};

struct MetricReport {
  std::string variant;
  double rmse = 0.0;  // arithmetic mean of per-seed values
  double std = 0.0;
  std::optional<double> dist_mm;
  std::vector<SeedMetrics> per_seed;
};

struct Metrics {
  double rmse = 0.0;
  double std = 0.0;
};

/// Test-set metrics of a trained model.
Metrics evaluate(const ModelSpec& spec, const ad::ParameterStore& store, const Dataset& test);

// ---- experiments ----------------------------------------------------------

enum class ExperimentKind {
  kGpRegression,
  kPushDifferentObjects,
  kPushDifferentSurfaces,
  kPushDifferentWeights,
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kGpRegression;
  int weight_count = 0;  // push-different-weights only
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  TrainConfig train = TrainConfig::regression_preset();
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::array<std::size_t, 4> hidden = {64, 64, 64, 64};

  // gp-regression
  std::size_t train_tasks = 200;
  std::size_t test_tasks = 20;
  std::size_t samples_per_task = 20;

  // push experiments
  std::filesystem::path data_path;
  ContextKind push_context = ContextKind::kIndicator;
  std::vector<std::string> test_objects;

  std::filesystem::path output_dir;
  std::size_t jobs = 1;

  std::string name() const;
  bool is_push() const { return kind != ExperimentKind::kGpRegression; }
  void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Failure inside run_experiment, tagged with where it happened.
class ExperimentError : public Error {
 public:
  ExperimentError(ErrorCategory category, std::string stage, std::string variant,
                  std::uint64_t seed, const std::string& cause);
  const std::string& stage() const noexcept { return stage_; }
  const std::string& variant() const noexcept { return variant_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::string stage_;
  std::string variant_;
  std::uint64_t seed_;
};

struct ExperimentResult {
  std::string experiment;
  std::vector<MetricReport> reports;  // one per variant, config order
  std::string table;
  std::string csv;
  nlohmann::json json;
};

/// The train/test data used for one seed.
Split experiment_data(const ExperimentConfig& cfg, std::uint64_t seed,
                      const Dataset* push_data = nullptr);
ModelSpec experiment_model_spec(const ExperimentConfig& cfg, Variant variant,
                                const Dataset& train);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string render_table(const std::string& experiment, const std::vector<MetricReport>& reports,
                         bool with_mm, std::size_t n_seeds);
std::string render_csv(const std::string& experiment, const std::vector<MetricReport>& reports);
nlohmann::json report_json(const std::string& experiment,
                           const std::vector<MetricReport>& reports);
void write_experiment_outputs(const ExperimentResult& result, const std::filesystem::path& dir);

}  // namespace cazsl
