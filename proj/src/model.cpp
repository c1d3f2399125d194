#include "cazsl/model.hpp"

#include <algorithm>
#include <cmath>

#include "cazsl/error.hpp"

namespace cazsl {

namespace {

constexpr double kStdFloor = 1e-4;
constexpr std::size_t kConvKernel = 5;
constexpr std::size_t kConvStride = 2;
constexpr std::size_t kEmbedChannels1 = 8;
constexpr std::size_t kEmbedChannels2 = 16;
constexpr std::size_t kPhiChannels = 8;

std::size_t conv_out(std::size_t n) { return (n - kConvKernel) / kConvStride + 1; }

Tensor glorot(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = sample_uniform(rng, -limit, limit);
  return t;
}

void add_dense(ad::ParameterStore& store, Rng& rng, const std::string& name,
               std::size_t in, std::size_t out, bool bias = true) {
  store.add(name + ".w", glorot(rng, Shape{in, out}, in, out));
  if (bias) store.add(name + ".b", Tensor(Shape{out}));
}

void add_conv(ad::ParameterStore& store, Rng& rng, const std::string& name,
              std::size_t cin, std::size_t cout) {
  const std::size_t area = kConvKernel * kConvKernel;
  store.add(name + ".k",
            glorot(rng, Shape{cout, cin, kConvKernel, kConvKernel}, cin * area, cout * area));
}

ad::Var dense(ad::Graph& g, const ad::ParameterStore& store, const std::string& name,
              ad::Var x) {
  return ad::linear(x, g.param(store, name + ".w"), g.param(store, name + ".b"));
}

ad::Var dense_nobias(ad::Graph& g, const ad::ParameterStore& store,
                     const std::string& name, ad::Var x) {
  return ad::linear(x, g.param(store, name + ".w"));
}

std::size_t visual_embed_flat() {
  const std::size_t s = conv_out(conv_out(kVisualSide));
  return kEmbedChannels2 * s * s;
}

// Size of the context features consumed by the CC and CM paths.
std::size_t feature_dim(const ModelSpec& spec) {
  return spec.context_kind == ContextKind::kVisual ? spec.visual_embed_dim
                                                   : spec.context_dim;
}

void require_context_shape(const ModelSpec& spec, const Tensor& contexts) {
  const bool visual = spec.context_kind == ContextKind::kVisual;
  const bool ok = visual ? (contexts.rank() == 4 && contexts.dim(1) == 1 &&
                            contexts.dim(2) == kVisualSide && contexts.dim(3) == kVisualSide)
                         : (contexts.rank() == 2 && contexts.dim(1) == spec.context_dim);
  if (!ok)
    throw ConfigError("context batch " + shape_string(contexts.shape()) +
                      " does not match a " + to_string(spec.context_kind) +
                      " context of length " + std::to_string(spec.context_dim));
}

Tensor flatten_rows(const Tensor& t) {
  return t.reshaped(Shape{t.dim(0), t.size() / t.dim(0)});
}

ad::Var phi(ad::Graph& g, const ModelSpec& spec, const ad::ParameterStore& store,
            const Tensor& contexts) {
  if (spec.distance == DistanceKind::kNeuralConv) {
    ad::Var x = g.constant(contexts);
    ad::Var h = ad::relu(ad::conv2d(x, g.param(store, "phi.conv.k"), kConvStride));
    return dense_nobias(g, store, "phi.fc", ad::avg_pool(h));
  }
  ad::Var x = g.constant(flatten_rows(contexts));
  return dense_nobias(g, store, "phi.fc2", ad::relu(dense_nobias(g, store, "phi.fc1", x)));
}

}  // namespace

// ---- ContextVector --------------------------------------------------------

ContextVector ContextVector::indicator(std::vector<double> bits) {
  const std::size_t n = bits.size();
  if (n == 0) throw DataError("indicator: empty payload");
  return {ContextKind::kIndicator, Tensor(Shape{n}, std::move(bits))};
}

ContextVector ContextVector::visual(Tensor image) {
  return {ContextKind::kVisual, std::move(image)};
}

ContextVector ContextVector::continuous(std::vector<double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw DataError("continuous context: empty payload");
  return {ContextKind::kContinuous, Tensor(Shape{n}, std::move(values))};
}

void ContextVector::validate() const {
  switch (kind) {
    case ContextKind::kIndicator:
      if (payload.rank() != 1 || payload.size() != kIndicatorLength)
        throw DataError("indicator: expected " + std::to_string(kIndicatorLength) +
                        " entries, got " + std::to_string(payload.size()));
      for (double v : payload.data())
        if (v != 0.0 && v != 1.0)
          throw DataError("indicator: entries must be 0 or 1, got " + std::to_string(v));
      break;
    case ContextKind::kVisual:
      if (payload.shape() != Shape{kVisualSide, kVisualSide})
        throw DataError("visual: expected a 32x32 grid, got " +
                        shape_string(payload.shape()));
      for (double v : payload.data())
        if (!(v >= 0.0 && v <= 1.0))
          throw DataError("visual: pixel values must lie in [0, 1], got " +
                          std::to_string(v));
      break;
    case ContextKind::kContinuous:
      if (!payload.all_finite()) throw DataError("context: non-finite value");
      break;
  }
}

// ---- names ----------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFcn: return "FCN";
    case Variant::kFcnCc: return "FCN+CC";
    case Variant::kFcnCm: return "FCN+CM";
    case Variant::kFcnCmL2Reg: return "FCN+CM+L2Reg";
    case Variant::kFcnCmNeuralReg: return "FCN+CM+NeuralReg";
  }
  return "?";
}

std::string to_string(ContextKind k) {
  switch (k) {
    case ContextKind::kIndicator: return "indicator";
    case ContextKind::kVisual: return "visual";
    case ContextKind::kContinuous: return "continuous";
  }
  return "?";
}

std::string to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::kEuclidean: return "euclidean";
    case DistanceKind::kNeuralFc: return "neural-fc";
    case DistanceKind::kNeuralConv: return "neural-conv";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  std::string key;
  for (char c : s)
    if (c != ' ') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (Variant v : kAllVariants) {
    std::string name = to_string(v);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (key == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

ContextKind parse_context_kind(std::string_view s) {
  for (auto k : {ContextKind::kIndicator, ContextKind::kVisual, ContextKind::kContinuous})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown context kind '" + std::string(s) + "'");
}

DistanceKind parse_distance_kind(std::string_view s) {
  for (auto k : {DistanceKind::kEuclidean, DistanceKind::kNeuralFc, DistanceKind::kNeuralConv})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown distance kind '" + std::string(s) + "'");
}

bool uses_mask(Variant v) {
  return v == Variant::kFcnCm || v == Variant::kFcnCmL2Reg || v == Variant::kFcnCmNeuralReg;
}

bool uses_regularizer(Variant v) {
  return v == Variant::kFcnCmL2Reg || v == Variant::kFcnCmNeuralReg;
}

// ---- ModelSpec ------------------------------------------------------------

ModelSpec ModelSpec::make(Variant variant, ContextKind context, std::size_t context_dim,
                          std::size_t input_dim, std::size_t output_dim, double lambda1,
                          double lambda2) {
  ModelSpec spec;
  spec.variant = variant;
  spec.context_kind = context;
  spec.context_dim = context == ContextKind::kVisual ? kVisualSide * kVisualSide : context_dim;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.lambda1 = uses_regularizer(variant) ? lambda1 : 0.0;
  spec.lambda2 = lambda2;
  if (variant == Variant::kFcnCmNeuralReg) {
    spec.lambda2 = 1.0;
    spec.distance = context == ContextKind::kVisual ? DistanceKind::kNeuralConv
                                                    : DistanceKind::kNeuralFc;
  }
  return spec;
}

void ModelSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) throw ConfigError("input/output dims must be positive");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("hidden widths must be positive");
  if (!(lambda1 >= 0.0)) throw ConfigError("lambda1 must be non-negative");
  if (!(lambda2 > 0.0)) throw ConfigError("lambda2 must be positive");
  if (!uses_regularizer(variant) && lambda1 != 0.0)
    throw ConfigError("lambda1 must be 0 for variant " + to_string(variant));
  if (variant == Variant::kFcnCmNeuralReg && lambda2 != 1.0)
    throw ConfigError("neural regularization fixes lambda2 = 1");
  const bool neural = distance != DistanceKind::kEuclidean;
  if (variant == Variant::kFcnCmNeuralReg && !neural)
    throw ConfigError("FCN+CM+NeuralReg needs a neural distance");
  if (variant == Variant::kFcnCmL2Reg && neural)
    throw ConfigError("FCN+CM+L2Reg uses the euclidean distance");
  if (distance == DistanceKind::kNeuralConv && context_kind != ContextKind::kVisual)
    throw ConfigError("neural-conv distance requires a visual context");
  if (context_kind == ContextKind::kVisual && context_dim != kVisualSide * kVisualSide)
    throw ConfigError("visual contexts are 32x32");
  if (context_kind == ContextKind::kIndicator && context_dim != kIndicatorLength)
    throw ConfigError("indicator contexts have 36 entries");
  if (context_dim == 0) throw ConfigError("context_dim must be positive");
}

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  return {
      {"variant", to_string(spec.variant)},
      {"input_dim", spec.input_dim},
      {"output_dim", spec.output_dim},
      {"hidden", spec.hidden},
      {"lambda1", spec.lambda1},
      {"lambda2", spec.lambda2},
      {"context_kind", to_string(spec.context_kind)},
      {"context_dim", spec.context_dim},
      {"distance", to_string(spec.distance)},
      {"mask_hidden", spec.mask_hidden},
      {"phi_hidden", spec.phi_hidden},
      {"phi_dim", spec.phi_dim},
      {"visual_embed_dim", spec.visual_embed_dim},
  };
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.variant = parse_variant(j.at("variant").get<std::string>());
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.output_dim = j.at("output_dim").get<std::size_t>();
    spec.hidden = j.at("hidden").get<std::array<std::size_t, 4>>();
    spec.lambda1 = j.at("lambda1").get<double>();
    spec.lambda2 = j.at("lambda2").get<double>();
    spec.context_kind = parse_context_kind(j.at("context_kind").get<std::string>());
    spec.context_dim = j.at("context_dim").get<std::size_t>();
    spec.distance = parse_distance_kind(j.at("distance").get<std::string>());
    spec.mask_hidden = j.value("mask_hidden", spec.mask_hidden);
    spec.phi_hidden = j.value("phi_hidden", spec.phi_hidden);
    spec.phi_dim = j.value("phi_dim", spec.phi_dim);
    spec.visual_embed_dim = j.value("visual_embed_dim", spec.visual_embed_dim);
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

// ---- parameters -----------------------------------------------------------

ad::ParameterStore init_parameters(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ad::ParameterStore store;
  const bool visual = spec.context_kind == ContextKind::kVisual;
  std::size_t in = spec.input_dim;
  if (spec.variant == Variant::kFcnCc) in += feature_dim(spec);
  add_dense(store, rng, "fc1", in, spec.hidden[0]);
  add_dense(store, rng, "fc2", spec.hidden[0], spec.hidden[1]);
  add_dense(store, rng, "fc3", spec.hidden[1], spec.hidden[2]);
  add_dense(store, rng, "fc4", spec.hidden[2], spec.hidden[3]);
  add_dense(store, rng, "head.mean", spec.hidden[3], spec.output_dim);
  add_dense(store, rng, "head.std", spec.hidden[3], spec.output_dim);

  const bool needs_context = spec.variant == Variant::kFcnCc || uses_mask(spec.variant);
  if (needs_context && visual) {
    add_conv(store, rng, "embed.conv1", 1, kEmbedChannels1);
    add_conv(store, rng, "embed.conv2", kEmbedChannels1, kEmbedChannels2);
    add_dense(store, rng, "embed.fc", visual_embed_flat(), spec.visual_embed_dim);
  }
  if (uses_mask(spec.variant)) {
    add_dense(store, rng, "mask.fc1", feature_dim(spec), spec.mask_hidden);
    store.add("mask.fc2.w", Tensor(Shape{spec.mask_hidden, spec.hidden[0]}));
    store.add("mask.fc2.b", Tensor(Shape{spec.hidden[0]}));
  }
  if (spec.variant == Variant::kFcnCmNeuralReg) {
    if (spec.distance == DistanceKind::kNeuralConv) {
      add_conv(store, rng, "phi.conv", 1, kPhiChannels);
      add_dense(store, rng, "phi.fc", kPhiChannels, spec.phi_dim, false);
    } else {
      add_dense(store, rng, "phi.fc1", spec.context_dim, spec.phi_hidden, false);
      add_dense(store, rng, "phi.fc2", spec.phi_hidden, spec.phi_dim, false);
    }
  }
  return store;
}

Tensor stack_contexts(std::span<const ContextVector* const> contexts) {
  if (contexts.empty()) throw ContractError("stack_contexts: no contexts");
  const ContextVector& first = *contexts.front();
  const std::size_t n = first.payload.size();
  std::vector<double> data;
  data.reserve(n * contexts.size());
  for (const ContextVector* c : contexts) {
    if (c->kind != first.kind || c->payload.size() != n)
      throw ConfigError("stack_contexts: mixed context kinds or sizes");
    data.insert(data.end(), c->payload.data().begin(), c->payload.data().end());
  }
  if (first.kind == ContextKind::kVisual)
    return Tensor(Shape{contexts.size(), 1, kVisualSide, kVisualSide}, std::move(data));
  return Tensor(Shape{contexts.size(), n}, std::move(data));
}

Tensor stack_contexts(std::span<const ContextVector> contexts) {
  std::vector<const ContextVector*> ptrs;
  ptrs.reserve(contexts.size());
  for (const auto& c : contexts) ptrs.push_back(&c);
  return stack_contexts(std::span<const ContextVector* const>(ptrs));
}

// ---- network --------------------------------------------------------------

namespace model {

ad::Var context_features(ad::Graph& g, const ModelSpec& spec,
                         const ad::ParameterStore& store, const Tensor& contexts) {
  require_context_shape(spec, contexts);
  if (spec.context_kind != ContextKind::kVisual) return g.constant(contexts);
  ad::Var x = g.constant(contexts);
  ad::Var h = ad::relu(ad::conv2d(x, g.param(store, "embed.conv1.k"), kConvStride));
  h = ad::relu(ad::conv2d(h, g.param(store, "embed.conv2.k"), kConvStride));
  h = ad::reshape(h, Shape{contexts.dim(0), visual_embed_flat()});
  return dense(g, store, "embed.fc", h);
}

ad::Var context_mask(ad::Graph& g, const ModelSpec& spec,
                     const ad::ParameterStore& store, const Tensor& contexts) {
  if (!uses_mask(spec.variant))
    throw ConfigError("variant " + to_string(spec.variant) + " has no context mask");
  ad::Var f = context_features(g, spec, store, contexts);
  ad::Var h = ad::relu(dense(g, store, "mask.fc1", f));
  return ad::scale(ad::sigmoid(dense(g, store, "mask.fc2", h)), 2.0);
}

ForwardOutput forward(ad::Graph& g, const ModelSpec& spec,
                      const ad::ParameterStore& store, const Tensor& x,
                      const Tensor& contexts) {
  if (x.rank() != 2 || x.dim(1) != spec.input_dim)
    throw ConfigError("input batch " + shape_string(x.shape()) + " does not match input_dim " +
                      std::to_string(spec.input_dim));
  if (contexts.dim(0) != x.dim(0))
    throw ConfigError("input and context batches differ in length");
  ad::Var in = g.constant(x);
  if (spec.variant == Variant::kFcnCc)
    in = ad::concat_cols(in, context_features(g, spec, store, contexts));

  ForwardOutput out;
  ad::Var h = ad::relu(dense(g, store, "fc1", in));
  if (uses_mask(spec.variant)) {
    out.mask = context_mask(g, spec, store, contexts);
    h = ad::elementwise_mul(h, *out.mask);
  }
  h = ad::relu(dense(g, store, "fc2", h));
  h = ad::relu(dense(g, store, "fc3", h));
  h = ad::relu(dense(g, store, "fc4", h));
  out.mean = dense(g, store, "head.mean", h);
  out.std = ad::add_scalar(ad::softplus(dense(g, store, "head.std", h)), kStdFloor);
  return out;
}

GaussianPrediction predict(const ModelSpec& spec, const ad::ParameterStore& store,
                           const Tensor& x, const Tensor& contexts) {
  ad::Graph g;
  ForwardOutput out = forward(g, spec, store, x, contexts);
  return {out.mean.value(), out.std.value()};
}

GaussianPrediction predict(const ModelSpec& spec, const ad::ParameterStore& store,
                           const Tensor& x, const ContextVector& context) {
  const ContextVector* ptr = &context;
  Tensor xb = x.rank() == 1 ? x.reshaped(Shape{1, x.size()}) : x;
  return predict(spec, store, xb,
                 stack_contexts(std::span<const ContextVector* const>(&ptr, 1)));
}

ad::Var context_distance(ad::Graph& g, const ModelSpec& spec,
                         const ad::ParameterStore& store, const Tensor& contexts_i,
                         const Tensor& contexts_j) {
  if (contexts_i.shape() != contexts_j.shape())
    throw ConfigError("context_distance: context batches " +
                      shape_string(contexts_i.shape()) + " and " +
                      shape_string(contexts_j.shape()) + " differ");
  require_context_shape(spec, contexts_i);
  if (spec.distance == DistanceKind::kEuclidean) {
    const Tensor a = flatten_rows(contexts_i);
    const Tensor b = flatten_rows(contexts_j);
    Tensor d(Shape{a.dim(0)});
    for (std::size_t r = 0; r < a.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.dim(1); ++c) {
        const double diff = a(r, c) - b(r, c);
        s += diff * diff;
      }
      d[r] = std::sqrt(s);
    }
    return g.constant(std::move(d));
  }
  if (spec.distance == DistanceKind::kNeuralConv && spec.context_kind != ContextKind::kVisual)
    throw ConfigError("neural-conv distance requires a visual context");
  return ad::row_dot(phi(g, spec, store, contexts_i), phi(g, spec, store, contexts_j));
}

PairLoss pair_loss(ad::Graph& g, const ModelSpec& spec, const ad::ParameterStore& store,
                   const PairBatch& batch) {
  const std::size_t p = batch.pairs();
  if (batch.x_j.dim(0) != p || batch.y_i.dim(0) != p || batch.y_j.dim(0) != p ||
      batch.c_i.dim(0) != p || batch.c_j.dim(0) != p)
    throw ConfigError("pair batch members disagree on the number of pairs");

  // Both twins run as one stacked batch through the same parameters.
  ad::Var xs = ad::concat_rows(g.constant(batch.x_i), g.constant(batch.x_j));
  ad::Var cs = ad::concat_rows(g.constant(batch.c_i), g.constant(batch.c_j));
  ad::Var ys = ad::concat_rows(g.constant(batch.y_i), g.constant(batch.y_j));
  ForwardOutput out = forward(g, spec, store, xs.value(), cs.value());

  // mean over 2P rows == mean over pairs of (nll_i + nll_j) / 2
  ad::Var nll = ad::mean(ad::gaussian_nll(out.mean, out.std, ys.value()));
  PairLoss result{nll, nll.value().item(), 0.0};
  if (!uses_regularizer(spec.variant) || spec.lambda1 == 0.0) return result;

  ad::Var m_i = ad::slice_rows(*out.mask, 0, p);
  ad::Var m_j = ad::slice_rows(*out.mask, p, 2 * p);
  ad::Var mask_gap = ad::row_distance(m_i, m_j);
  ad::Var dist = context_distance(g, spec, store, batch.c_i, batch.c_j);
  ad::Var diff = ad::sub(mask_gap, ad::scale(dist, spec.lambda2));
  ad::Var reg = ad::mean(ad::square(diff));
  result.reg = reg.value().item();
  result.total = ad::add(nll, ad::scale(reg, spec.lambda1));
  return result;
}

}  // namespace model
}  // namespace cazsl
