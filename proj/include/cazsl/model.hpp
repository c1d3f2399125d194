#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cazsl/autodiff.hpp"
#include "cazsl/tensor.hpp"

namespace cazsl {

enum class ContextKind { kIndicator, kVisual, kContinuous };

inline constexpr std::size_t kIndicatorLength = 36;
inline constexpr std::size_t kVisualSide = 32;

/// Object attributes conditioning the predictor.
struct ContextVector {
  ContextKind kind = ContextKind::kContinuous;
  Tensor payload;  // [36] indicator, [32 x 32] visual, [n] continuous

  static ContextVector indicator(std::vector<double> bits);
  static ContextVector visual(Tensor image);
  static ContextVector continuous(std::vector<double> values);

  /// Throws DataError naming the violated field.
  void validate() const;
  /// Flattened feature length.
  std::size_t feature_size() const { return payload.size(); }

  friend bool operator==(const ContextVector&, const ContextVector&) = default;
};

enum class Variant { kFcn, kFcnCc, kFcnCm, kFcnCmL2Reg, kFcnCmNeuralReg };
enum class DistanceKind { kEuclidean, kNeuralFc, kNeuralConv };

inline constexpr std::array<Variant, 5> kAllVariants = {
    Variant::kFcn, Variant::kFcnCc, Variant::kFcnCm, Variant::kFcnCmL2Reg,
    Variant::kFcnCmNeuralReg};

std::string to_string(Variant v);
std::string to_string(ContextKind k);
std::string to_string(DistanceKind k);
Variant parse_variant(std::string_view s);
ContextKind parse_context_kind(std::string_view s);
DistanceKind parse_distance_kind(std::string_view s);

bool uses_mask(Variant v);
bool uses_regularizer(Variant v);

struct ModelSpec {
  Variant variant = Variant::kFcn;
  std::size_t input_dim = 3;
  std::size_t output_dim = 1;
  std::array<std::size_t, 4> hidden = {64, 64, 64, 64};
  double lambda1 = 0.0;
  double lambda2 = 1.0;
  ContextKind context_kind = ContextKind::kContinuous;
  std::size_t context_dim = 2;  // flattened length; 1024 for visual
  DistanceKind distance = DistanceKind::kEuclidean;

  std::size_t mask_hidden = 64;
  std::size_t phi_hidden = 32;
  std::size_t phi_dim = 16;
  std::size_t visual_embed_dim = 32;

  /// Spec with the distance kind implied by the variant and context.
  static ModelSpec make(Variant variant, ContextKind context, std::size_t context_dim,
                        std::size_t input_dim, std::size_t output_dim,
                        double lambda1 = 0.0, double lambda2 = 1.0);

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Per-sample Gaussian: mean and std are [B x output_dim], std > 0.
struct GaussianPrediction {
  Tensor mean;
  Tensor std;
};

/// Glorot-uniform weights, zero biases. The base network is drawn first so
/// two specs differing only in context handling share base weights for the
/// same seed. The mask network's output layer starts at zero (mask = 1).
ad::ParameterStore init_parameters(const ModelSpec& spec, Rng& rng);

/// Stacks contexts into [B x dim] (indicator/continuous) or [B x 1 x 32 x 32].
Tensor stack_contexts(std::span<const ContextVector* const> contexts);
Tensor stack_contexts(std::span<const ContextVector> contexts);

namespace model {

/// Context fed to the CC/CM paths: raw for indicator and continuous contexts,
/// a two-layer conv embedding for visual ones.
ad::Var context_features(ad::Graph& g, const ModelSpec& spec,
                         const ad::ParameterStore& store, const Tensor& contexts);

/// Positive first-layer mask, [B x hidden[0]]: 2 * sigmoid(mask net(c)).
ad::Var context_mask(ad::Graph& g, const ModelSpec& spec,
                     const ad::ParameterStore& store, const Tensor& contexts);

struct ForwardOutput {
  ad::Var mean;
  ad::Var std;
  std::optional<ad::Var> mask;
};

ForwardOutput forward(ad::Graph& g, const ModelSpec& spec,
                      const ad::ParameterStore& store, const Tensor& x,
                      const Tensor& contexts);

/// Value-only evaluation.
GaussianPrediction predict(const ModelSpec& spec, const ad::ParameterStore& store,
                           const Tensor& x, const Tensor& contexts);
GaussianPrediction predict(const ModelSpec& spec, const ad::ParameterStore& store,
                           const Tensor& x, const ContextVector& context);

/// Per-row context distance d(c_i, c_j): [B]. Euclidean is a constant;
/// the neural forms are phi(c_i)^T phi(c_j) and carry gradients.
ad::Var context_distance(ad::Graph& g, const ModelSpec& spec,
                         const ad::ParameterStore& store, const Tensor& contexts_i,
                         const Tensor& contexts_j);

/// P Siamese pairs; each tensor has P rows.
struct PairBatch {
  Tensor x_i, y_i, c_i;
  Tensor x_j, y_j, c_j;
  std::size_t pairs() const { return x_i.dim(0); }
};

struct PairLoss {
  ad::Var total;
  double nll = 0.0;  // mean over pairs of (nll_i + nll_j) / 2
  double reg = 0.0;  // mean over pairs of the regularizer
};

/// mean over pairs of
///   (nll_i + nll_j) / 2 + lambda1 * (|m(c_i) - m(c_j)|_F - lambda2 d(c_i, c_j))^2
/// The regularizer is omitted (exactly zero) when lambda1 == 0 or the variant
/// has none.
PairLoss pair_loss(ad::Graph& g, const ModelSpec& spec, const ad::ParameterStore& store,
                   const PairBatch& batch);

}  // namespace model
}  // namespace cazsl
