#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "cazsl/data.hpp"
#include "cazsl/error.hpp"
#include "doctest.h"

using namespace cazsl;

namespace {

std::string push_record(const std::string& id, const std::string& surface, int weights,
                        std::size_t indicator_len = 36) {
  nlohmann::json j{{"object_id", id},
                   {"surface", surface},
                   {"weight_count", weights},
                   {"x", {0.1, 0.2, 0.3}},
                   {"y", {0.01, -0.02, 0.05}},
                   {"indicator", std::vector<int>(indicator_len, 1)}};
  return j.dump();
}

}  // namespace

TEST_CASE("rbf kernel") {
  const Tensor pts = Tensor::vector({0, 1, 2, 4});
  const Tensor k = rbf_kernel_matrix(pts, 2.0, 0.5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(k(i, i) == 4.0);
  CHECK(k == k.transposed());
  const Tensor unit = rbf_kernel_matrix(Tensor::vector({0, 1}), 1.0, 0.5);
  CHECK(unit(0, 1) == doctest::Approx(0.36787944117144233).epsilon(1e-14));
  CHECK_THROWS_AS(rbf_kernel_matrix(pts, 0.0, 1.0), RangeError);
  CHECK_THROWS_AS(rbf_kernel_matrix(pts, 1.0, -1.0), RangeError);
}

TEST_CASE("gp simulator") {
  Rng rng(1);
  const Dataset train = simulate_gp_dataset(rng, 200, 20);
  CHECK(train.size() == 4000);
  CHECK(train.input_dim() == 3);
  CHECK(train.output_dim() == 1);
  CHECK(train.context_kind() == ContextKind::kContinuous);
  for (const Sample& s : train.samples()) {
    CHECK((s.context.payload[0] >= 0.1 && s.context.payload[0] < 10.0));
    CHECK((s.context.payload[1] >= 0.1 && s.context.payload[1] < 10.0));
  }
  CHECK(simulate_gp_dataset(rng, 20, 20, Role::kTest).size() == 400);
  CHECK_THROWS_AS(simulate_gp_dataset(rng, 0, 20), RangeError);

  Rng a(5), b(5);
  CHECK(simulate_gp_dataset(a, 3, 4) == simulate_gp_dataset(b, 3, 4));
}

TEST_CASE("trajectory windowing") {
  GpTask four{1.0, 1.0, Tensor::vector({1, 2, 3, 4})};
  const auto one = window_trajectory(four, "t");
  REQUIRE(one.size() == 1);
  CHECK(one[0].x == Tensor::vector({1, 2, 3}));
  CHECK(one[0].y[0] == 4);

  Rng rng(2);
  GpTask task{2.0, 3.0, sample_gp_trajectory(rng, 2.0, 3.0, 23)};
  const auto windows = window_trajectory(task, "t");
  REQUIRE(windows.size() == 20);
  // Overlapping windows reproduce the trajectory exactly.
  std::vector<double> rebuilt(windows[0].x.data().begin(), windows[0].x.data().end());
  for (const Sample& s : windows) rebuilt.push_back(s.y[0]);
  CHECK(rebuilt == task.trajectory.values());
  for (std::size_t t = 1; t < windows.size(); ++t) {
    CHECK(windows[t].x[0] == windows[t - 1].x[1]);
    CHECK(windows[t].x[2] == windows[t - 1].y[0]);
  }
}

TEST_CASE("push records") {
  SUBCASE("fixture of 3 objects x 5 pushes") {
    std::ostringstream os;
    for (int o = 0; o < 3; ++o)
      for (int p = 0; p < 5; ++p) os << push_record("obj" + std::to_string(o), "abs", o % 3) << "\n";
    std::istringstream in(os.str());
    const Dataset d = parse_push_dataset(in, "fixture");
    CHECK(d.size() == 15);
    std::set<std::string> ids;
    for (const Sample& s : d.samples()) ids.insert(s.object_id);
    CHECK(ids.size() == 3);
    CHECK(d.context_kind() == ContextKind::kIndicator);
  }
  SUBCASE("37-entry indicator is rejected with its line number") {
    std::istringstream in(push_record("a", "abs", 0) + "\n" + push_record("b", "abs", 0, 37) + "\n");
    try {
      parse_push_dataset(in, "bad.jsonl");
      FAIL("expected a validation error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("bad.jsonl:2") != std::string::npos);
      CHECK(msg.find("indicator") != std::string::npos);
    }
  }
  SUBCASE("malformed JSON reports the line") {
    std::istringstream in(push_record("a", "abs", 0) + "\n{not json\n");
    try {
      parse_push_dataset(in, "f");
      FAIL("expected a parse error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("f:2: parse error") != std::string::npos);
    }
  }
  SUBCASE("field violations") {
    auto bad = [](nlohmann::json j) {
      std::istringstream in(j.dump());
      CHECK_THROWS_AS(parse_push_dataset(in, "f"), DataError);
    };
    auto base = nlohmann::json::parse(push_record("a", "abs", 0));
    auto j = base;
    j["weight_count"] = 3;
    bad(j);
    j = base;
    j["surface"] = "glass";
    bad(j);
    j = base;
    j["x"] = {1, 2};
    bad(j);
    j = base;
    j.erase("object_id");
    bad(j);
  }
  SUBCASE("visual grids are scaled into [0, 1]") {
    auto j = nlohmann::json::parse(push_record("a", "abs", 0));
    std::vector<std::vector<double>> grid(32, std::vector<double>(32, 0.0));
    grid[3][4] = 255.0;
    grid[5][6] = 51.0;
    j["visual"] = grid;
    const Sample s = sample_from_json(j);
    CHECK(s.context.kind == ContextKind::kVisual);
    CHECK(s.context.payload(3, 4) == 1.0);
    CHECK(s.context.payload(5, 6) == doctest::Approx(0.2));
  }
  SUBCASE("round trip") {
    Rng rng(3);
    for (bool visual : {false, true}) {
      const Dataset d = synthetic_push_dataset(rng, 4, 3, visual);
      std::stringstream buf;
      write_dataset(d, buf);
      CHECK(parse_push_dataset(buf, "rt") == d);
    }
    const Dataset gp = simulate_gp_dataset(rng, 2, 5);
    std::stringstream buf;
    write_dataset(gp, buf);
    const Dataset back = parse_push_dataset(buf, "rt");
    CHECK(back == gp);
    CHECK(back.context_kind() == ContextKind::kContinuous);
  }
  CHECK_THROWS_AS(load_push_dataset("/nonexistent/file.jsonl"), DataError);
}

TEST_CASE("dataset invariants") {
  CHECK_THROWS_AS(Dataset({}, Role::kTrain, "empty"), DataError);
  Rng rng(4);
  auto a = synthetic_push_dataset(rng, 1, 1).samples();
  auto b = simulate_gp_dataset(rng, 1, 1).samples();
  a.push_back(b[0]);
  CHECK_THROWS_AS(Dataset(a, Role::kTrain, "mixed"), DataError);
}

TEST_CASE("split setups") {
  Rng rng(5);
  const Dataset data = synthetic_push_dataset(rng, 20, 6);

  SUBCASE("different weights") {
    for (int k = 0; k <= 2; ++k) {
      const Split s = split_setup(data, SplitSetup::different_weights(k), rng);
      for (const Sample& x : s.train.samples()) CHECK(*x.weight_count != k);
      for (const Sample& x : s.test.samples()) CHECK(*x.weight_count == k);
      CHECK(s.train.size() + s.test.size() == data.size());
    }
  }
  SUBCASE("different objects") {
    const Split s = split_setup(data, SplitSetup::different_objects(), rng);
    std::set<std::string> tr, te;
    for (const Sample& x : s.train.samples()) tr.insert(x.object_id);
    for (const Sample& x : s.test.samples()) te.insert(x.object_id);
    for (const auto& id : te) CHECK(tr.count(id) == 0);
    CHECK(te.size() == 2);  // 10% of 20 objects
    SplitSetup fixed = SplitSetup::different_objects();
    fixed.test_objects = {"obj003", "obj007"};
    const Split f = split_setup(data, fixed, rng);
    for (const Sample& x : f.test.samples()) CHECK((x.object_id == "obj003" || x.object_id == "obj007"));
    CHECK(f.test.size() == 12);
  }
  SUBCASE("different surfaces") {
    const Split s = split_setup(data, SplitSetup::different_surfaces(), rng);
    for (const Sample& x : s.train.samples()) CHECK(*x.surface == Surface::kAbs);
    for (const Sample& x : s.test.samples()) CHECK(*x.surface == Surface::kPlywood);
  }
  SUBCASE("missing attributes are configuration errors") {
    const Dataset gp = simulate_gp_dataset(rng, 3, 4);
    CHECK_THROWS_AS(split_setup(gp, SplitSetup::different_weights(0), rng), ConfigError);
    CHECK_THROWS_AS(split_setup(gp, SplitSetup::different_surfaces(), rng), ConfigError);
  }
}

TEST_CASE("pairing") {
  Rng rng(6);
  const auto batches = make_pairs(256, 64, rng);
  REQUIRE(batches.size() == 4);
  std::vector<int> seen(256, 0);
  for (const auto& b : batches) {
    CHECK(b.i.size() == 32);
    CHECK(b.j.size() == 32);
    for (std::size_t k = 0; k < b.i.size(); ++k) {
      ++seen[b.i[k]];
      ++seen[b.j[k]];
    }
  }
  for (int c : seen) CHECK(c == 1);

  const auto next = make_pairs(256, 64, rng);
  CHECK(next[0].i != batches[0].i);

  const auto tail = make_pairs(100, 32, rng);
  CHECK(tail.size() == 3);  // the incomplete batch is dropped
  CHECK_THROWS_AS(make_pairs(100, 33, rng), ConfigError);

  Rng a(7), b(7);
  const auto pa = make_pairs(50, 10, a), pb = make_pairs(50, 10, b);
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].i == pb[k].i);
}

TEST_CASE("records with both contexts") {
  auto j = nlohmann::json::parse(push_record("a", "abs", 0));
  j["visual"] = std::vector<std::vector<double>>(32, std::vector<double>(32, 0.5));
  CHECK(sample_from_json(j).context.kind == ContextKind::kVisual);
  CHECK(sample_from_json(j, ContextKind::kIndicator).context.kind == ContextKind::kIndicator);
  CHECK(sample_from_json(j, ContextKind::kVisual).context.kind == ContextKind::kVisual);
  j.erase("visual");
  CHECK_THROWS_AS(sample_from_json(j, ContextKind::kVisual), DataError);
  std::istringstream in(j.dump() + "\n");
  CHECK_THROWS_AS(parse_push_dataset(in, "f", ContextKind::kContinuous), DataError);
}

TEST_CASE("synthetic fixture files carry both contexts") {
  const auto path = std::filesystem::temp_directory_path() / "cazsl-test-both.jsonl";
  write_synthetic_push_file(path, 3, 4, 2, true);
  const Dataset vis = load_push_dataset(path);
  const Dataset ind = load_push_dataset(path, ContextKind::kIndicator);
  CHECK(vis.context_kind() == ContextKind::kVisual);
  CHECK(ind.context_kind() == ContextKind::kIndicator);
  REQUIRE(vis.size() == 8);
  for (std::size_t i = 0; i < vis.size(); ++i) CHECK(vis.samples()[i].y == ind.samples()[i].y);
  std::filesystem::remove(path);
}
