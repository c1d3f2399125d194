#include "cazsl/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cazsl/error.hpp"

namespace cazsl {

TrainConfig TrainConfig::regression_preset() {
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.learning_rate = 0.002;
  cfg.batch_size = 32;
  cfg.lambda1 = 1e-4;
  cfg.lambda2 = 10.0;
  cfg.tag = "gp";
  return cfg;
}

TrainConfig TrainConfig::pushing_preset(ContextKind context) {
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.learning_rate = 0.002;
  cfg.batch_size = 64;
  cfg.lambda1 = 0.01;
  cfg.lambda2 = context == ContextKind::kVisual ? 0.01 : 10.0;
  cfg.tag = "push";
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0 || batch_size % 2 != 0)
    throw ConfigError("batch size must be a positive even number");
  if (!(lambda1 >= 0.0)) throw ConfigError("lambda1 must be non-negative");
  if (!(lambda2 > 0.0)) throw ConfigError("lambda2 must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"lambda1", cfg.lambda1},
          {"lambda2", cfg.lambda2},
          {"checkpoint_every", cfg.checkpoint_every},
          {"checkpoint_dir", cfg.checkpoint_dir.string()},
          {"tag", cfg.tag}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  try {
    base.epochs = j.value("epochs", base.epochs);
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.seed = j.value("seed", base.seed);
    base.lambda1 = j.value("lambda1", base.lambda1);
    base.lambda2 = j.value("lambda2", base.lambda2);
    base.checkpoint_every = j.value("checkpoint_every", base.checkpoint_every);
    base.checkpoint_dir = j.value("checkpoint_dir", base.checkpoint_dir.string());
    base.tag = j.value("tag", base.tag);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  base.validate();
  return base;
}

void adam_step(ad::ParameterStore& store, AdamState& state, double lr) {
  if (!store.has_gradients())
    throw ContractError("adam_step called before a backward pass populated gradients");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double correction2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (const std::string& name : store.names()) {
    Tensor& value = store.value(name);
    const Tensor& grad = store.grad(name);
    auto [m_it, m_new] = state.first.try_emplace(name, value.shape());
    auto [v_it, v_new] = state.second.try_emplace(name, value.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (m.shape() != value.shape() || v.shape() != value.shape())
      throw ContractError("adam moments for '" + name + "' have the wrong shape");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g;
      v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
  store.mark_gradients(false);
}

std::vector<EpochStats> train_store(const ModelSpec& spec, ad::ParameterStore& store,
                                    const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  spec.validate();
  if (data.context_kind() != spec.context_kind || data.input_dim() != spec.input_dim ||
      data.output_dim() != spec.output_dim || data.context_dim() != spec.context_dim)
    throw ConfigError("model " + to_string(spec.variant) + " (" + to_string(spec.context_kind) +
                      " context) does not match dataset " + data.provenance());
  if (data.size() < cfg.batch_size)
    throw ConfigError("dataset of " + std::to_string(data.size()) +
                      " samples is smaller than one batch of " +
                      std::to_string(cfg.batch_size));

  const StackedDataset stacked(data);
  AdamState adam;
  std::vector<EpochStats> trace;
  trace.reserve(cfg.epochs);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = make_pairs(data.size(), cfg.batch_size, rng);
    EpochStats stats{epoch, 0.0, 0.0, 0.0};
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const model::PairBatch batch = stacked.gather(batches[b]);
      ad::Graph g;
      const model::PairLoss loss = model::pair_loss(g, spec, store, batch);
      const double value = loss.total.value().item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss " << value << " at epoch " << epoch << ", batch " << b
            << " (" << to_string(spec.variant) << ", seed " << cfg.seed << ")";
        throw NumericError(msg.str());
      }
      ad::backward(loss.total, store);
      adam_step(store, adam, cfg.learning_rate);
      stats.mean_loss += value;
      stats.mean_nll += loss.nll;
      stats.mean_reg += loss.reg;
    }
    const double n = static_cast<double>(batches.size());
    stats.mean_loss /= n;
    stats.mean_nll /= n;
    stats.mean_reg /= n;
    trace.push_back(stats);

    const bool periodic = cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0;
    if (!cfg.checkpoint_dir.empty() && (periodic || epoch == cfg.epochs)) {
      save_checkpoint(cfg.checkpoint_dir / (cfg.tag + "-epoch" + std::to_string(epoch) + ".json"),
                      store, &spec);
    }
  }
  return trace;
}

TrainResult train(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg) {
  // Separate streams keep the pairing order independent of how many
  // parameters a variant draws at init.
  Rng init_rng(derive_seed(cfg.seed, 0));
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  TrainResult result;
  result.store = init_parameters(spec, init_rng);
  result.trace = train_store(spec, result.store, data, cfg, shuffle_rng);
  return result;
}

void write_loss_trace_csv(const std::vector<EpochStats>& trace, std::ostream& out) {
  out << "epoch,mean_loss,mean_nll,mean_reg\n";
  out << std::setprecision(10);
  for (const EpochStats& s : trace)
    out << s.epoch << ',' << s.mean_loss << ',' << s.mean_nll << ',' << s.mean_reg << '\n';
}

void write_loss_trace_csv(const std::vector<EpochStats>& trace,
                          const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  write_loss_trace_csv(trace, out);
}

nlohmann::json checkpoint_to_json(const ad::ParameterStore& store, const ModelSpec* spec) {
  nlohmann::json params = nlohmann::json::object();
  for (const std::string& name : store.names()) params[name] = tensor_to_json(store.value(name));
  nlohmann::json j{{"format_version", kCheckpointFormatVersion}, {"params", params}};
  if (spec) j["model"] = model_spec_to_json(*spec);
  return j;
}

ad::ParameterStore store_from_checkpoint(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("format_version") || !j.contains("params"))
    throw DataError("checkpoint: missing format_version or params");
  if (j["format_version"] != kCheckpointFormatVersion)
    throw DataError("checkpoint: unsupported format_version " + j["format_version"].dump());
  ad::ParameterStore store;
  for (const auto& [name, tensor] : j["params"].items()) store.add(name, tensor_from_json(tensor));
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore& store,
                     const ModelSpec* spec) {
  std::ofstream out = open_for_write(path);
  out << checkpoint_to_json(store, spec).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  Checkpoint cp{store_from_checkpoint(j), std::nullopt};
  if (j.contains("model")) cp.spec = model_spec_from_json(j["model"]);
  return cp;
}

}  // namespace cazsl
