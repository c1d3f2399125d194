#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cazsl/error.hpp"
#include "cazsl/training.hpp"
#include "doctest.h"

using namespace cazsl;
namespace fs = std::filesystem;

namespace {

ModelSpec gp_spec(Variant v, double l1 = 0.0, double l2 = 10.0) {
  ModelSpec spec = ModelSpec::make(v, ContextKind::kContinuous, 2, 3, 1, l1, l2);
  spec.hidden = {16, 16, 16, 16};
  spec.mask_hidden = 16;
  return spec;
}

TrainConfig quick(std::size_t epochs, std::size_t batch = 16) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.learning_rate = 0.002;
  cfg.seed = 3;
  return cfg;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cazsl-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("presets") {
  const TrainConfig r = TrainConfig::regression_preset();
  CHECK(r.epochs == 500);
  CHECK(r.learning_rate == 0.002);
  CHECK(r.batch_size == 32);
  CHECK(r.lambda1 == 1e-4);
  CHECK(r.lambda2 == 10.0);
  const TrainConfig p = TrainConfig::pushing_preset(ContextKind::kIndicator);
  CHECK(p.epochs == 3000);
  CHECK(p.batch_size == 64);
  CHECK(p.lambda1 == 0.01);
  CHECK(p.lambda2 == 10.0);
  CHECK(TrainConfig::pushing_preset(ContextKind::kVisual).lambda2 == 0.01);

  TrainConfig odd = r;
  odd.batch_size = 31;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  CHECK(train_config_from_json(train_config_to_json(r)).epochs == 500);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
}

TEST_CASE("adam step") {
  ad::ParameterStore store;
  store.add("w", Tensor(Shape{1}));
  AdamState state;
  CHECK_THROWS_AS(adam_step(store, state, 0.002), ContractError);

  store.grad("w")[0] = 1.0;
  store.mark_gradients(true);
  adam_step(store, state, 0.002);
  // m_hat = 1, v_hat = 1: w = -0.002 / (1 + 1e-8)
  CHECK(store.value("w")[0] == doctest::Approx(-0.002 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(state.step == 1);
  CHECK(state.first.at("w").shape() == store.value("w").shape());

  ad::ParameterStore zero;
  zero.add("a", Tensor::vector({0.5, -1.0}));
  zero.mark_gradients(true);
  AdamState zs;
  for (int i = 0; i < 5; ++i) {
    zero.mark_gradients(true);
    adam_step(zero, zs, 0.1);
  }
  CHECK(zero.value("a") == Tensor::vector({0.5, -1.0}));
  CHECK(zs.step == 5);
}

TEST_CASE("training") {
  Rng rng(1);
  const Dataset data = simulate_gp_dataset(rng, 5, 20);

  SUBCASE("FCN smoke convergence") {
    const TrainResult r = train(gp_spec(Variant::kFcn), data, quick(50));
    CHECK(r.trace.size() == 50);
    CHECK(r.trace.back().mean_nll < r.trace.front().mean_nll);
    CHECK(r.trace.front().epoch == 1);
  }
  SUBCASE("determinism") {
    const TrainResult a = train(gp_spec(Variant::kFcnCmL2Reg, 1e-2), data, quick(5));
    const TrainResult b = train(gp_spec(Variant::kFcnCmL2Reg, 1e-2), data, quick(5));
    CHECK(a.store == b.store);
  }
  SUBCASE("lambda1 = 0 makes the regularized variants follow FCN+CM") {
    const TrainResult cm = train(gp_spec(Variant::kFcnCm), data, quick(5));
    const TrainResult l2 = train(gp_spec(Variant::kFcnCmL2Reg, 0.0), data, quick(5));
    const TrainResult nr = train(gp_spec(Variant::kFcnCmNeuralReg, 0.0, 1.0), data, quick(5));
    CHECK(cm.store == l2.store);
    for (const std::string& n : cm.store.names()) CHECK(cm.store.value(n) == nr.store.value(n));
    CHECK(nr.store.size() > cm.store.size());
  }
  SUBCASE("epoch loss is the mean over pairs") {
    // With one batch holding every sample, the pair mean equals the sample mean.
    TrainConfig cfg = quick(1, 100);
    const ModelSpec spec = gp_spec(Variant::kFcn);
    Rng init(derive_seed(cfg.seed, 0));
    const ad::ParameterStore start = init_parameters(spec, init);
    const GaussianPrediction p = model::predict(spec, start, data.inputs(), data.contexts());
    const Tensor y = data.targets();
    double nll = 0.0;
    for (std::size_t r = 0; r < y.dim(0); ++r) {
      const double z = (y(r, 0) - p.mean(r, 0)) / p.std(r, 0);
      nll += std::log(p.std(r, 0)) + 0.5 * std::log(2 * M_PI) + 0.5 * z * z;
    }
    nll /= static_cast<double>(y.dim(0));
    const TrainResult r = train(spec, data, cfg);
    CHECK(r.trace[0].mean_loss == doctest::Approx(nll).epsilon(1e-12));
  }
  SUBCASE("mismatched model and data") {
    ModelSpec wrong = gp_spec(Variant::kFcn);
    wrong.input_dim = 4;
    CHECK_THROWS_AS(train(wrong, data, quick(1)), ConfigError);
  }
  SUBCASE("non-finite loss names the epoch and batch") {
    auto samples = data.samples();
    samples[7].y[0] = 1e300;
    const Dataset broken(samples, Role::kTrain, "broken");
    try {
      train(gp_spec(Variant::kFcn), broken, quick(2, 100));
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch 1") != std::string::npos);
      CHECK(msg.find("batch 0") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoints and loss trace") {
  Rng rng(2);
  const Dataset data = simulate_gp_dataset(rng, 3, 20);
  const fs::path dir = scratch("ckpt");
  TrainConfig cfg = quick(5);
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir;
  cfg.tag = "demo";
  const ModelSpec spec = gp_spec(Variant::kFcnCm);
  const TrainResult r = train(spec, data, cfg);
  CHECK(fs::exists(dir / "demo-epoch2.json"));
  CHECK(fs::exists(dir / "demo-epoch4.json"));
  CHECK(fs::exists(dir / "demo-epoch5.json"));
  CHECK_FALSE(fs::exists(dir / "demo-epoch3.json"));

  const Checkpoint cp = load_checkpoint(dir / "demo-epoch5.json");
  CHECK(cp.store == r.store);
  REQUIRE(cp.spec.has_value());
  CHECK(*cp.spec == spec);

  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"format_version": 99, "params": {}})";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), DataError);

  std::ostringstream csv;
  write_loss_trace_csv(r.trace, csv);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "epoch,mean_loss,mean_nll,mean_reg");
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);) ++rows;
  CHECK(rows == 5);
  fs::remove_all(dir);
}
