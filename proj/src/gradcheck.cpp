#include "cazsl/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <sstream>

#include "cazsl/error.hpp"
#include "cazsl/model.hpp"

namespace cazsl {

namespace {

using ad::Graph;
using ad::Var;

// Sign pattern of every kink-bearing node on the tape. Two probes with the
// same pattern lie on one smooth piece of the function.
std::vector<bool> kink_pattern(const Graph& g) {
  std::vector<bool> bits;
  for (std::size_t id = 0; id < g.size(); ++id) {
    const char* op = g.op_at(id);
    const bool relu = std::strcmp(op, "relu") == 0;
    if (!relu && std::strcmp(op, "row_distance") != 0) continue;
    for (double v : g.value_at(id).data()) bits.push_back(v > 0.0);
  }
  return bits;
}

struct Probe {
  double value;
  std::vector<bool> pattern;
};

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, Rng* rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (!rng || n <= limit) return all;
  shuffle(all, *rng);
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

void record(GradCheckEntry& e, double analytic, double numeric, bool straddles,
            const GradCheckOptions& opts) {
  if (straddles) {
    ++e.skipped;
    return;
  }
  ++e.checked;
  e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic, numeric, opts.floor));
}

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = sample_uniform(rng, lo, hi);
  return t;
}

// Values bounded away from zero so ReLU probes never cross the kink.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    v = sample_uniform(rng, 0.1, 1.5);
    if (rng.uniform01() < 0.5) v = -v;
  }
  return t;
}

// sum(w * v) with fixed random weights so every output entry matters.
Var weighted_sum(Var v, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = v.value().size();
  Graph& g = v.graph();
  Var w = g.constant(random_tensor(rng, Shape{1, n}, -1.0, 1.0));
  return ad::sum(ad::elementwise_mul(ad::reshape(v, Shape{1, n}), w));
}

void add_op_checks(GradCheckReport& report, std::uint64_t seed, const GradCheckOptions& opts) {
  Rng rng(derive_seed(seed, 7));
  const std::uint64_t ws = derive_seed(seed, 8);
  const double tol = opts.op_tolerance;
  auto check = [&](const std::string& name, const LeafFunction& f, std::vector<Tensor> in) {
    GradCheckEntry e = check_leaf_gradients(name, f, std::move(in), tol, opts);
    e.seed = seed;
    report.entries.push_back(std::move(e));
  };
  auto normal = [&](Shape s) { return random_tensor(rng, std::move(s), -1.5, 1.5); };

  check("linear", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::linear(v[0], v[1], v[2]), ws);
  }, {normal({4, 3}), normal({3, 2}), normal({2})});
  check("linear_nobias", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::linear(v[0], v[1]), ws);
  }, {normal({4, 3}), normal({3, 2})});
  check("relu", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::relu(v[0]), ws);
  }, {away_from_zero(rng, {3, 4})});
  check("sigmoid", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::sigmoid(v[0]), ws);
  }, {normal({3, 4})});
  check("softplus", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::softplus(v[0]), ws);
  }, {normal({3, 4})});
  check("scale", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::scale(v[0], -1.7), ws);
  }, {normal({3, 4})});
  check("add_scalar", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::add_scalar(v[0], 0.3)), ws);
  }, {normal({3, 4})});
  check("add", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::add(v[0], v[1])), ws);
  }, {normal({3, 4}), normal({3, 4})});
  check("sub", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::sub(v[0], v[1])), ws);
  }, {normal({3, 4}), normal({3, 4})});
  check("elementwise_mul", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::elementwise_mul(v[0], v[1]), ws);
  }, {normal({3, 4}), normal({3, 4})});
  check("elementwise_mul_broadcast", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::elementwise_mul(v[0], v[1]), ws);
  }, {normal({3, 4}), normal({4})});
  check("square", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(v[0]), ws);
  }, {normal({3, 4})});
  check("sum", [](Graph&, const std::vector<Var>& v) {
    return ad::square(ad::sum(v[0]));
  }, {normal({3, 4})});
  check("mean", [](Graph&, const std::vector<Var>& v) {
    return ad::square(ad::mean(v[0]));
  }, {normal({3, 4})});
  check("reshape", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::reshape(v[0], Shape{2, 6})), ws);
  }, {normal({3, 4})});
  check("concat_cols", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::concat_cols(v[0], v[1])), ws);
  }, {normal({3, 2}), normal({3, 4})});
  check("concat_rows", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::concat_rows(v[0], v[1])), ws);
  }, {normal({2, 3}), normal({4, 3})});
  check("slice_rows", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::slice_rows(v[0], 1, 3)), ws);
  }, {normal({4, 3})});
  check("conv2d", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::conv2d(v[0], v[1], 2), ws);
  }, {normal({1, 1, 6, 6}), normal({2, 1, 3, 3})});
  check("conv2d_batched", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::conv2d(v[0], v[1], 2), ws);
  }, {normal({2, 2, 7, 7}), normal({3, 2, 3, 3})});
  check("avg_pool", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::square(ad::avg_pool(v[0])), ws);
  }, {normal({2, 3, 4, 4})});

  // Distance probes keep the operands well separated.
  Tensor a = normal({3, 4});
  Tensor b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? 0.5 : -0.5);
  check("frobenius_distance", [](Graph&, const std::vector<Var>& v) {
    return ad::frobenius_distance(v[0], v[1]);
  }, {a, b});
  check("row_distance", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::row_distance(v[0], v[1]), ws);
  }, {a, b});
  check("row_dot", [ws](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::row_dot(v[0], v[1]), ws);
  }, {normal({3, 4}), normal({3, 4})});
  const Tensor y = normal({3, 2});
  check("gaussian_nll", [ws, y](Graph&, const std::vector<Var>& v) {
    return weighted_sum(ad::gaussian_nll(v[0], v[1], y), ws);
  }, {normal({3, 2}), random_tensor(rng, {3, 2}, 0.3, 2.0)});
}

struct LossCase {
  std::string name;
  Variant variant;
  ContextKind context;
  std::size_t context_dim;
  std::size_t pairs;
};

Tensor random_contexts(Rng& rng, ContextKind kind, std::size_t rows, std::size_t dim) {
  if (kind == ContextKind::kVisual)
    return random_tensor(rng, Shape{rows, 1, kVisualSide, kVisualSide}, 0.0, 1.0);
  if (kind == ContextKind::kIndicator) {
    Tensor t(Shape{rows, dim});
    for (auto& v : t.data()) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
    return t;
  }
  return random_tensor(rng, Shape{rows, dim}, 0.1, 3.0);
}

void add_loss_checks(GradCheckReport& report, std::uint64_t seed,
                     const GradCheckOptions& opts) {
  static const LossCase kCases[] = {
      {"pair_loss FCN", Variant::kFcn, ContextKind::kContinuous, 2, 3},
      {"pair_loss FCN+CC", Variant::kFcnCc, ContextKind::kContinuous, 2, 3},
      {"pair_loss FCN+CM", Variant::kFcnCm, ContextKind::kContinuous, 2, 3},
      {"pair_loss FCN+CM+L2Reg", Variant::kFcnCmL2Reg, ContextKind::kContinuous, 2, 3},
      {"pair_loss FCN+CM+L2Reg indicator", Variant::kFcnCmL2Reg, ContextKind::kIndicator,
       kIndicatorLength, 3},
      {"pair_loss FCN+CM+NeuralReg", Variant::kFcnCmNeuralReg, ContextKind::kContinuous, 2,
       3},
      {"pair_loss FCN+CC visual", Variant::kFcnCc, ContextKind::kVisual,
       kVisualSide * kVisualSide, 2},
      {"pair_loss FCN+CM+NeuralReg visual", Variant::kFcnCmNeuralReg, ContextKind::kVisual,
       kVisualSide * kVisualSide, 2},
  };
  for (std::size_t k = 0; k < std::size(kCases); ++k) {
    const LossCase& c = kCases[k];
    Rng rng(derive_seed(seed, 1000 + k));
    ModelSpec spec = ModelSpec::make(c.variant, c.context, c.context_dim, 3, 2, 0.5, 2.0);
    spec.hidden = {8, 8, 8, 8};
    spec.mask_hidden = 8;
    spec.phi_hidden = 8;
    spec.phi_dim = 4;
    spec.visual_embed_dim = 8;
    ad::ParameterStore store = init_parameters(spec, rng);
    // Leave the zero-initialized mask output (and zero biases) behind so the
    // check runs at a generic point. Noise follows each tensor's own scale
    // to keep activations moderate.
    for (const std::string& name : store.names()) {
      Tensor& t = store.value(name);
      double ss = 0.0;
      for (double v : t.data()) ss += v * v;
      const double rms = std::sqrt(ss / static_cast<double>(t.size()));
      const double sigma = rms > 0.0 ? 0.5 * rms : 0.1;
      for (auto& v : t.data()) v += sigma * rng.normal();
    }

    model::PairBatch batch;
    const std::size_t p = c.pairs;
    batch.x_i = random_tensor(rng, Shape{p, 3}, -1.5, 1.5);
    batch.x_j = random_tensor(rng, Shape{p, 3}, -1.5, 1.5);
    batch.y_i = random_tensor(rng, Shape{p, 2}, -1.5, 1.5);
    batch.y_j = random_tensor(rng, Shape{p, 2}, -1.5, 1.5);
    batch.c_i = random_contexts(rng, c.context, p, c.context_dim);
    batch.c_j = random_contexts(rng, c.context, p, c.context_dim);

    StoreFunction f = [spec, batch](Graph& g, const ad::ParameterStore& s) {
      return model::pair_loss(g, spec, s, batch).total;
    };
    GradCheckEntry e =
        check_store_gradients(c.name, f, std::move(store), opts.loss_tolerance, rng, opts);
    e.seed = seed;
    report.entries.push_back(std::move(e));
  }
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckEntry check_leaf_gradients(const std::string& name, const LeafFunction& f,
                                    std::vector<Tensor> inputs, double tolerance,
                                    const GradCheckOptions& opts) {
  GradCheckEntry e;
  e.name = name;
  e.tolerance = tolerance;

  auto evaluate = [&](std::vector<Var>* leaves, Graph& g) {
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.variable(t));
    Var out = f(g, vars);
    if (leaves) *leaves = vars;
    return out;
  };
  Graph g;
  std::vector<Var> leaves;
  Var out = evaluate(&leaves, g);
  g.backward(out);
  std::vector<Tensor> analytic;
  for (Var v : leaves) analytic.push_back(g.grad(v));

  auto probe = [&]() {
    Graph pg;
    Var o = evaluate(nullptr, pg);
    return Probe{o.value().item(), kink_pattern(pg)};
  };
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + opts.epsilon;
      const Probe plus = probe();
      inputs[t][i] = orig - opts.epsilon;
      const Probe minus = probe();
      inputs[t][i] = orig;
      const double numeric = (plus.value - minus.value) / (2.0 * opts.epsilon);
      record(e, analytic[t][i], numeric, plus.pattern != minus.pattern, opts);
    }
  }
  return e;
}

GradCheckEntry check_store_gradients(const std::string& name, const StoreFunction& f,
                                     ad::ParameterStore store, double tolerance, Rng& rng,
                                     const GradCheckOptions& opts) {
  GradCheckEntry e;
  e.name = name;
  e.tolerance = tolerance;
  {
    Graph g;
    Var out = f(g, store);
    ad::backward(out, store);
  }
  auto probe = [&]() {
    Graph pg;
    Var o = f(pg, store);
    return Probe{o.value().item(), kink_pattern(pg)};
  };
  for (const std::string& pname : store.names()) {
    const Tensor analytic = store.grad(pname);
    Tensor& value = store.value(pname);
    for (std::size_t i : pick_coords(value.size(), opts.max_coords_per_tensor, &rng)) {
      const double orig = value[i];
      value[i] = orig + opts.epsilon;
      const Probe plus = probe();
      value[i] = orig - opts.epsilon;
      const Probe minus = probe();
      value[i] = orig;
      const double numeric = (plus.value - minus.value) / (2.0 * opts.epsilon);
      record(e, analytic[i], numeric, plus.pattern != minus.pattern, opts);
    }
  }
  return e;
}

bool GradCheckReport::passed() const { return !entries.empty() && failures() == 0; }

std::size_t GradCheckReport::failures() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [](const GradCheckEntry& e) { return !e.passed(); }));
}

GradCheckReport run_gradcheck_suite(std::span<const std::uint64_t> seeds,
                                    const GradCheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  for (std::uint64_t seed : seeds) {
    add_op_checks(report, seed, opts);
    add_loss_checks(report, seed, opts);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string format_report(const GradCheckReport& report, bool verbose) {
  struct Summary {
    double worst = 0.0;
    double tolerance = 0.0;
    std::size_t checked = 0, skipped = 0, failed = 0, runs = 0;
  };
  std::vector<std::pair<std::string, Summary>> rows;
  std::ostringstream os;
  for (const GradCheckEntry& e : report.entries) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const auto& r) { return r.first == e.name; });
    if (it == rows.end()) {
      rows.emplace_back(e.name, Summary{});
      it = rows.end() - 1;
    }
    Summary& s = it->second;
    s.worst = std::max(s.worst, e.max_rel_error);
    s.tolerance = e.tolerance;
    s.checked += e.checked;
    s.skipped += e.skipped;
    s.failed += e.passed() ? 0 : 1;
    ++s.runs;
    if (verbose && !e.passed()) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "FAIL %s seed=%llu rel=%.3e tol=%.0e\n", e.name.c_str(),
                    static_cast<unsigned long long>(e.seed), e.max_rel_error, e.tolerance);
      os << buf;
    }
  }
  char buf[256];
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof buf, "%-36s %s  max rel %.2e (tol %.0e)  %zu coords, %zu kink skips, %zu runs\n",
                  name.c_str(), s.failed ? "FAIL" : "ok  ", s.worst, s.tolerance, s.checked,
                  s.skipped, s.runs);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%zu checks, %zu failed, %.1f s\n", report.entries.size(),
                report.failures(), report.seconds);
  os << buf;
  return os.str();
}

}  // namespace cazsl
