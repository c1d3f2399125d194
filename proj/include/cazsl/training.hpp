#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cazsl/autodiff.hpp"
#include "cazsl/data.hpp"
#include "cazsl/model.hpp"

namespace cazsl {

struct TrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.002;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double lambda1 = 0.0;
  double lambda2 = 1.0;
  std::size_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_dir;  // empty disables checkpoints
  std::string tag = "run";

  /// 500 epochs, lr 0.002, batch 32, lambda1 1e-4, lambda2 10.
  static TrainConfig regression_preset();
  /// Up to 3000 epochs, lr 0.002, batch 64; lambdas depend on the context.
  static TrainConfig pushing_preset(ContextKind context);

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
/// Missing fields keep the values already in `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Adam moments, one pair per parameter.
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::map<std::string, Tensor> first;
  std::map<std::string, Tensor> second;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update from the gradients in `store`.
void adam_step(ad::ParameterStore& store, AdamState& state, double lr);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double mean_nll = 0.0;
  double mean_reg = 0.0;
};

struct TrainResult {
  ad::ParameterStore store;
  std::vector<EpochStats> trace;
};

/// Initializes parameters from cfg.seed and trains on Siamese pairs of
/// `data`. The returned parameters are those after the last epoch.
TrainResult train(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg);

/// Trains an existing store in place (used when the caller controls init).
std::vector<EpochStats> train_store(const ModelSpec& spec, ad::ParameterStore& store,
                                    const Dataset& data, const TrainConfig& cfg, Rng& rng);

void write_loss_trace_csv(const std::vector<EpochStats>& trace, std::ostream& out);
void write_loss_trace_csv(const std::vector<EpochStats>& trace,
                          const std::filesystem::path& path);

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_to_json(const ad::ParameterStore& store, const ModelSpec* spec);
ad::ParameterStore store_from_checkpoint(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore& store,
                     const ModelSpec* spec = nullptr);

struct Checkpoint {
  ad::ParameterStore store;
  std::optional<ModelSpec> spec;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cazsl
