#include "cazsl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cazsl/error.hpp"

namespace cazsl {

namespace {

constexpr std::size_t kWindow = 3;
constexpr std::size_t kPushDim = 3;
constexpr int kMaxResample = 100;

Tensor stack_rows(const std::vector<Sample>& samples, const Tensor Sample::*member) {
  const std::size_t n = samples.size();
  const std::size_t d = (samples.front().*member).size();
  std::vector<double> data;
  data.reserve(n * d);
  for (const Sample& s : samples)
    data.insert(data.end(), (s.*member).data().begin(), (s.*member).data().end());
  return Tensor(Shape{n, d}, std::move(data));
}

std::vector<double> read_floats(const nlohmann::json& j, const char* field,
                                std::size_t expected) {
  const auto& arr = j.at(field);
  if (!arr.is_array()) throw DataError(std::string(field) + ": expected an array");
  if (expected && arr.size() != expected)
    throw DataError(std::string(field) + ": expected " + std::to_string(expected) +
                    " entries, got " + std::to_string(arr.size()));
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw DataError(std::string(field) + ": non-numeric entry");
    out.push_back(v.get<double>());
  }
  return out;
}

Tensor read_visual(const nlohmann::json& j) {
  const auto& rows = j.at("visual");
  if (!rows.is_array() || rows.size() != kVisualSide)
    throw DataError("visual: expected 32 rows, got " +
                    std::to_string(rows.is_array() ? rows.size() : 0));
  std::vector<double> pixels;
  pixels.reserve(kVisualSide * kVisualSide);
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != kVisualSide)
      throw DataError("visual: expected 32 columns per row");
    for (const auto& v : row) {
      if (!v.is_number()) throw DataError("visual: non-numeric pixel");
      const double p = v.get<double>();
      if (!(p >= 0.0) || !std::isfinite(p)) throw DataError("visual: negative or non-finite pixel");
      pixels.push_back(p);
    }
  }
  const double peak = *std::max_element(pixels.begin(), pixels.end());
  if (peak > 1.0)
    for (double& p : pixels) p /= peak;
  return Tensor(Shape{kVisualSide, kVisualSide}, std::move(pixels));
}

}  // namespace

std::string to_string(Surface s) { return s == Surface::kAbs ? "abs" : "plywood"; }

Surface parse_surface(std::string_view s) {
  if (s == "abs") return Surface::kAbs;
  if (s == "plywood") return Surface::kPlywood;
  throw DataError("surface: expected \"abs\" or \"plywood\", got \"" + std::string(s) + "\"");
}

Dataset::Dataset(std::vector<Sample> samples, Role role, std::string provenance)
    : samples_(std::move(samples)), role_(role), provenance_(std::move(provenance)) {
  if (samples_.empty()) throw DataError("dataset is empty (" + provenance_ + ")");
  const Sample& first = samples_.front();
  for (const Sample& s : samples_) {
    if (s.x.size() != first.x.size() || s.y.size() != first.y.size() ||
        s.context.kind != first.context.kind ||
        s.context.payload.shape() != first.context.payload.shape())
      throw DataError("dataset mixes sample dimensions or context kinds (" + provenance_ + ")");
  }
}

Tensor Dataset::inputs() const { return stack_rows(samples_, &Sample::x); }
Tensor Dataset::targets() const { return stack_rows(samples_, &Sample::y); }

Tensor Dataset::contexts() const {
  std::vector<const ContextVector*> ptrs;
  ptrs.reserve(samples_.size());
  for (const Sample& s : samples_) ptrs.push_back(&s.context);
  return stack_contexts(std::span<const ContextVector* const>(ptrs));
}

// ---- GP simulator ---------------------------------------------------------

Tensor rbf_kernel_matrix(const Tensor& points, double xi, double ell) {
  if (!(xi > 0.0) || !(ell > 0.0))
    throw RangeError("rbf kernel parameters must be positive, got xi=" + std::to_string(xi) +
                     " ell=" + std::to_string(ell));
  const std::size_t n = points.size();
  Tensor k(Shape{n, n});
  const double scale = xi * xi;
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = scale;
    for (std::size_t j = 0; j < i; ++j) {
      const double d = points[i] - points[j];
      const double v = scale * std::exp(-(d * d) / (2.0 * ell));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Tensor sample_gp_trajectory(Rng& rng, double xi, double ell, std::size_t length) {
  Tensor grid(Shape{length});
  for (std::size_t i = 0; i < length; ++i) grid[i] = static_cast<double>(i);
  const Tensor l = cholesky(rbf_kernel_matrix(grid, xi, ell));
  const Tensor z = sample_standard_normal(rng, length);
  Tensor out(Shape{length});
  for (std::size_t i = 0; i < length; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k <= i; ++k) s += l(i, k) * z[k];
    out[i] = s;
  }
  return out;
}

std::vector<Sample> window_trajectory(const GpTask& task, const std::string& object_id) {
  const std::size_t length = task.trajectory.size();
  std::vector<Sample> out;
  if (length < kWindow + 1) return out;
  const auto context = ContextVector::continuous({task.xi, task.ell});
  for (std::size_t t = kWindow - 1; t + 1 < length; ++t) {
    Sample s{Tensor(Shape{kWindow}), Tensor(Shape{1}), context, object_id,
             std::nullopt, std::nullopt};
    for (std::size_t k = 0; k < kWindow; ++k) s.x[k] = task.trajectory[t + 1 - kWindow + k];
    s.y[0] = task.trajectory[t + 1];
    out.push_back(std::move(s));
  }
  return out;
}

Dataset simulate_gp_dataset(Rng& rng, std::size_t n_tasks, std::size_t samples_per_task,
                            Role role) {
  if (n_tasks == 0 || samples_per_task == 0)
    throw RangeError("simulate_gp_dataset needs n_tasks >= 1 and samples_per_task >= 1");
  std::vector<Sample> samples;
  samples.reserve(n_tasks * samples_per_task);
  for (std::size_t task = 0; task < n_tasks; ++task) {
    for (int attempt = 0;; ++attempt) {
      GpTask t;
      t.xi = sample_uniform(rng, kGpParamLo, kGpParamHi);
      t.ell = sample_uniform(rng, kGpParamLo, kGpParamHi);
      try {
        t.trajectory = sample_gp_trajectory(rng, t.xi, t.ell, samples_per_task + kWindow);
      } catch (const NumericError& e) {
        std::clog << "gp task " << task << ": " << e.what() << "; resampling parameters\n";
        if (attempt + 1 >= kMaxResample) throw;
        continue;
      }
      auto windows = window_trajectory(t, "gp-" + std::to_string(task));
      samples.insert(samples.end(), std::make_move_iterator(windows.begin()),
                     std::make_move_iterator(windows.end()));
      break;
    }
  }
  std::ostringstream prov;
  prov << "gp(seed=" << rng.seed() << ", tasks=" << n_tasks
       << ", samples_per_task=" << samples_per_task << ")";
  return Dataset(std::move(samples), role, prov.str());
}

// ---- records --------------------------------------------------------------

nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["object_id"] = s.object_id;
  if (s.surface) j["surface"] = to_string(*s.surface);
  if (s.weight_count) j["weight_count"] = *s.weight_count;
  j["x"] = s.x.values();
  j["y"] = s.y.values();
  switch (s.context.kind) {
    case ContextKind::kIndicator: {
      std::vector<int> bits;
      for (double v : s.context.payload.data()) bits.push_back(static_cast<int>(v));
      j["indicator"] = bits;
      break;
    }
    case ContextKind::kVisual: {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t r = 0; r < kVisualSide; ++r) {
        std::vector<double> row(s.context.payload.data().begin() + r * kVisualSide,
                                s.context.payload.data().begin() + (r + 1) * kVisualSide);
        rows.push_back(row);
      }
      j["visual"] = rows;
      break;
    }
    case ContextKind::kContinuous:
      j["context"] = s.context.payload.values();
      break;
  }
  return j;
}

Sample sample_from_json(const nlohmann::json& j, std::optional<ContextKind> context) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  Sample s;
  try {
    s.object_id = j.at("object_id").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("object_id: missing or not a string");
  }
  if (j.contains("surface")) {
    if (!j["surface"].is_string()) throw DataError("surface: expected a string");
    s.surface = parse_surface(j["surface"].get<std::string>());
  }
  if (j.contains("weight_count")) {
    if (!j["weight_count"].is_number_integer()) throw DataError("weight_count: expected 0, 1 or 2");
    const int w = j["weight_count"].get<int>();
    if (w < 0 || w > 2) throw DataError("weight_count: expected 0, 1 or 2, got " + std::to_string(w));
    s.weight_count = w;
  }
  const bool is_gp = j.contains("context");
  auto require = [&](const char* field) {
    if (!j.contains(field)) throw DataError(std::string(field) + ": missing");
  };
  require("x");
  require("y");
  const std::size_t dim = is_gp ? 0 : kPushDim;
  auto x = read_floats(j, "x", dim);
  auto y = read_floats(j, "y", dim);
  if (x.empty() || y.empty()) throw DataError("x/y: empty");
  const std::size_t nx = x.size(), ny = y.size();
  s.x = Tensor(Shape{nx}, std::move(x));
  s.y = Tensor(Shape{ny}, std::move(y));

  const bool has_visual = j.contains("visual") && !j["visual"].is_null();
  const ContextKind kind = context ? *context
                           : is_gp ? ContextKind::kContinuous
                           : has_visual ? ContextKind::kVisual
                                        : ContextKind::kIndicator;
  switch (kind) {
    case ContextKind::kContinuous:
      require("context");
      s.context = ContextVector::continuous(read_floats(j, "context", 0));
      break;
    case ContextKind::kVisual:
      if (!has_visual) throw DataError("visual: missing");
      s.context = ContextVector::visual(read_visual(j));
      break;
    case ContextKind::kIndicator:
      require("indicator");
      s.context = ContextVector::indicator(read_floats(j, "indicator", 0));
      break;
  }
  s.context.validate();
  return s;
}

Dataset parse_push_dataset(std::istream& in, const std::string& provenance,
                           std::optional<ContextKind> context) {
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(provenance + ":" + std::to_string(line_no) + ": parse error: " + e.what());
    }
    try {
      samples.push_back(sample_from_json(j, context));
    } catch (const DataError& e) {
      throw DataError(provenance + ":" + std::to_string(line_no) + ": validation error: " +
                      e.what());
    }
  }
  return Dataset(std::move(samples), Role::kTrain, provenance);
}

Dataset load_push_dataset(const std::filesystem::path& path, std::optional<ContextKind> context) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  return parse_push_dataset(in, path.string(), context);
}

void write_dataset(const Dataset& data, std::ostream& out) {
  for (const Sample& s : data.samples()) out << sample_to_json(s).dump() << '\n';
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  write_dataset(data, out);
}

Dataset synthetic_push_dataset(Rng& rng, std::size_t n_objects, std::size_t pushes_per_object,
                               bool with_visual) {
  if (n_objects == 0 || pushes_per_object == 0)
    throw RangeError("synthetic_push_dataset needs at least one object and push");
  std::vector<Sample> samples;
  samples.reserve(n_objects * pushes_per_object);
  for (std::size_t o = 0; o < n_objects; ++o) {
    std::vector<double> bits(kIndicatorLength, 0.0);
    for (auto& b : bits) b = rng.uniform01() < 0.5 ? 1.0 : 0.0;
    bits[o % kIndicatorLength] = 1.0;
    double shape = 0.0;
    for (std::size_t i = 0; i < 12; ++i) shape += bits[i];
    shape /= 12.0;
    const int weights = static_cast<int>(o % 3);
    const double mass = 1.0 + 0.5 * weights;

    ContextVector context = ContextVector::indicator(bits);
    if (with_visual) {
      Tensor img(Shape{kVisualSide, kVisualSide});
      const double radius = 6.0 + 8.0 * shape;
      const double c = (kVisualSide - 1) / 2.0;
      for (std::size_t r = 0; r < kVisualSide; ++r)
        for (std::size_t k = 0; k < kVisualSide; ++k)
          img(r, k) = std::hypot(r - c, k - c) <= radius ? 1.0 : 0.0;
      context = ContextVector::visual(std::move(img));
    }
    char id[32];
    std::snprintf(id, sizeof id, "obj%03zu", o);
    for (std::size_t p = 0; p < pushes_per_object; ++p) {
      const Surface surface = p % 2 ? Surface::kPlywood : Surface::kAbs;
      const double friction = surface == Surface::kAbs ? 0.3 : 0.5;
      const double px = sample_uniform(rng, -1.0, 1.0);
      const double py = sample_uniform(rng, -1.0, 1.0);
      const double angle = sample_uniform(rng, -1.0, 1.0);
      const double gain = (1.0 + shape) / (mass * (1.0 + friction));
      Sample s;
      s.x = Tensor::vector({px, py, angle});
      s.y = Tensor::vector({gain * px + 0.01 * rng.normal(),
                            0.5 * gain * py + 0.01 * rng.normal(),
                            0.3 * shape * angle - 0.1 * px * py + 0.01 * rng.normal()});
      s.context = context;
      s.object_id = id;
      s.surface = surface;
      s.weight_count = weights;
      samples.push_back(std::move(s));
    }
  }
  return Dataset(std::move(samples), Role::kTrain,
                 "synthetic(" + std::to_string(n_objects) + "x" +
                     std::to_string(pushes_per_object) + ")");
}

// ---- splits ---------------------------------------------------------------

std::string to_string(const SplitSetup& s) {
  switch (s.kind) {
    case SplitKind::kDifferentObjects: return "different-objects";
    case SplitKind::kDifferentSurfaces: return "different-surfaces";
    case SplitKind::kDifferentWeights:
      return "different-weights(" + std::to_string(s.weight_count) + ")";
  }
  return "?";
}

Split split_setup(const Dataset& data, const SplitSetup& setup, Rng& rng) {
  std::vector<Sample> train, test;
  switch (setup.kind) {
    case SplitKind::kDifferentObjects: {
      std::set<std::string> test_ids(setup.test_objects.begin(), setup.test_objects.end());
      if (test_ids.empty()) {
        std::set<std::string> unique;
        for (const Sample& s : data.samples()) unique.insert(s.object_id);
        if (unique.size() < 2)
          throw ConfigError("different-objects needs at least two objects");
        std::vector<std::string> ids(unique.begin(), unique.end());
        shuffle(ids, rng);
        auto n_test = static_cast<std::size_t>(
            std::ceil(setup.test_fraction * static_cast<double>(ids.size())));
        n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
        test_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
      }
      for (const Sample& s : data.samples())
        (test_ids.count(s.object_id) ? test : train).push_back(s);
      break;
    }
    case SplitKind::kDifferentSurfaces:
      for (const Sample& s : data.samples()) {
        if (!s.surface) throw ConfigError("different-surfaces needs a surface on every sample");
        (*s.surface == Surface::kAbs ? train : test).push_back(s);
      }
      break;
    case SplitKind::kDifferentWeights:
      if (setup.weight_count < 0 || setup.weight_count > 2)
        throw ConfigError("different-weights: k must be 0, 1 or 2");
      for (const Sample& s : data.samples()) {
        if (!s.weight_count)
          throw ConfigError("different-weights needs weight_count on every sample");
        (*s.weight_count == setup.weight_count ? test : train).push_back(s);
      }
      break;
  }
  const std::string prov = data.provenance() + " / " + to_string(setup);
  if (train.empty() || test.empty())
    throw DataError(to_string(setup) + " leaves an empty " + (train.empty() ? "train" : "test") +
                    " partition");
  return {Dataset(std::move(train), Role::kTrain, prov + " / train"),
          Dataset(std::move(test), Role::kTest, prov + " / test")};
}

// ---- pairing --------------------------------------------------------------

std::vector<PairIndices> make_pairs(std::size_t n_samples, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0 || batch_size % 2 != 0)
    throw ConfigError("batch size must be a positive even number, got " +
                      std::to_string(batch_size));
  std::vector<std::size_t> order(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<PairIndices> batches;
  for (std::size_t start = 0; start + batch_size <= n_samples; start += batch_size) {
    PairIndices b;
    b.i.reserve(batch_size / 2);
    b.j.reserve(batch_size / 2);
    for (std::size_t k = 0; k < batch_size; k += 2) {
      b.i.push_back(order[start + k]);
      b.j.push_back(order[start + k + 1]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t stride = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<double> data;
  data.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    if (r >= t.dim(0)) throw ContractError("gather_rows: row index out of range");
    data.insert(data.end(), t.data().begin() + r * stride, t.data().begin() + (r + 1) * stride);
  }
  return Tensor(std::move(shape), std::move(data));
}

model::PairBatch StackedDataset::gather(const PairIndices& idx) const {
  return {gather_rows(x, idx.i), gather_rows(y, idx.i), gather_rows(contexts, idx.i),
          gather_rows(x, idx.j), gather_rows(y, idx.j), gather_rows(contexts, idx.j)};
}


void write_synthetic_push_file(const std::filesystem::path& path, std::uint64_t seed,
                               std::size_t n_objects, std::size_t pushes_per_object,
                               bool with_visual) {
  Rng a(seed), b(seed);
  const Dataset indicator = synthetic_push_dataset(a, n_objects, pushes_per_object, false);
  std::ofstream out = open_for_write(path);
  if (!with_visual) {
    write_dataset(indicator, out);
    return;
  }
  const Dataset visual = synthetic_push_dataset(b, n_objects, pushes_per_object, true);
  for (std::size_t i = 0; i < indicator.size(); ++i) {
    nlohmann::json j = sample_to_json(indicator.samples()[i]);
    j["visual"] = sample_to_json(visual.samples()[i])["visual"];
    out << j.dump() << '\n';
  }
}

}  // namespace cazsl
