#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cazsl/model.hpp"
#include "cazsl/tensor.hpp"

namespace cazsl {

enum class Surface { kAbs, kPlywood };
enum class Role { kTrain, kTest };

std::string to_string(Surface s);
Surface parse_surface(std::string_view s);

struct Sample {
  Tensor x;  // [input_dim]
  Tensor y;  // [output_dim]
  ContextVector context;
  std::string object_id;
  std::optional<Surface> surface;
  std::optional<int> weight_count;

  friend bool operator==(const Sample&, const Sample&) = default;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Sample> samples, Role role, std::string provenance);

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  Role role() const noexcept { return role_; }
  const std::string& provenance() const noexcept { return provenance_; }

  ContextKind context_kind() const { return samples_.front().context.kind; }
  std::size_t input_dim() const { return samples_.front().x.size(); }
  std::size_t output_dim() const { return samples_.front().y.size(); }
  std::size_t context_dim() const { return samples_.front().context.feature_size(); }

  /// Rows stacked for batch evaluation.
  Tensor inputs() const;
  Tensor targets() const;
  Tensor contexts() const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.samples_ == b.samples_;
  }

 private:
  std::vector<Sample> samples_;
  Role role_ = Role::kTrain;
  std::string provenance_;
};

// ---- Gaussian-process simulator -----------------------------------------

/// K[i,j] = xi^2 * exp(-(p_i - p_j)^2 / (2 * ell)).
Tensor rbf_kernel_matrix(const Tensor& points, double xi, double ell);

struct GpTask {
  double xi = 0.0;
  double ell = 0.0;
  Tensor trajectory;
};

inline constexpr double kGpParamLo = 0.1;
inline constexpr double kGpParamHi = 10.0;

/// One zero-mean GP trajectory of `length` points on the grid 0, 1, 2, ...
Tensor sample_gp_trajectory(Rng& rng, double xi, double ell, std::size_t length);

/// Windows {z_{t-2}, z_{t-1}, z_t} -> z_{t+1} with context {xi, ell}.
std::vector<Sample> window_trajectory(const GpTask& task, const std::string& object_id);

/// Per task: (xi, ell) ~ Unif(0.1, 10)^2, one trajectory of length
/// samples_per_task + 3, slid into samples_per_task windows.
Dataset simulate_gp_dataset(Rng& rng, std::size_t n_tasks, std::size_t samples_per_task,
                            Role role = Role::kTrain);

// ---- pushing records ------------------------------------------------------

/// Reads the JSON-lines record format. Visual grids whose values exceed 1 are
/// divided by their maximum. Pushing records may carry both an indicator and
/// a visual context; `context` picks one, otherwise visual wins when present.
Dataset load_push_dataset(const std::filesystem::path& path,
                          std::optional<ContextKind> context = std::nullopt);
Dataset parse_push_dataset(std::istream& in, const std::string& provenance,
                           std::optional<ContextKind> context = std::nullopt);
/// Opens `path` for writing, creating missing parent directories.
std::ofstream open_for_write(const std::filesystem::path& path);
void write_dataset(const Dataset& data, const std::filesystem::path& path);
void write_dataset(const Dataset& data, std::ostream& out);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j,
                        std::optional<ContextKind> context = std::nullopt);

/// Synthetic pushing records for pipeline tests: per-object indicator (and
/// optional 32x32 disk image), weight_count = object index mod 3, alternating
/// surfaces, and a smooth context-dependent push response.
Dataset synthetic_push_dataset(Rng& rng, std::size_t n_objects, std::size_t pushes_per_object,
                               bool with_visual = false);

/// Writes the synthetic fixture as pushing records. Every record carries the
/// indicator; with_visual adds the image, matching real converted files.
void write_synthetic_push_file(const std::filesystem::path& path, std::uint64_t seed,
                               std::size_t n_objects, std::size_t pushes_per_object,
                               bool with_visual);

// ---- splits ---------------------------------------------------------------

enum class SplitKind { kDifferentObjects, kDifferentSurfaces, kDifferentWeights };

struct SplitSetup {
  SplitKind kind = SplitKind::kDifferentObjects;
  int weight_count = 0;                       // different-weights only
  std::vector<std::string> test_objects;      // different-objects; empty = random 10%
  double test_fraction = 0.1;

  static SplitSetup different_objects() { return {}; }
  static SplitSetup different_surfaces() {
    SplitSetup s;
    s.kind = SplitKind::kDifferentSurfaces;
    return s;
  }
  static SplitSetup different_weights(int k) {
    SplitSetup s;
    s.kind = SplitKind::kDifferentWeights;
    s.weight_count = k;
    return s;
  }
};

std::string to_string(const SplitSetup& s);

struct Split {
  Dataset train;
  Dataset test;
};

Split split_setup(const Dataset& data, const SplitSetup& setup, Rng& rng);

// ---- pairing --------------------------------------------------------------

/// Index pairs for one epoch: shuffle, cut into batches of `batch_size`
/// (the incomplete tail is dropped), pair element 2k with 2k+1.
struct PairIndices {
  std::vector<std::size_t> i;
  std::vector<std::size_t> j;
};

std::vector<PairIndices> make_pairs(std::size_t n_samples, std::size_t batch_size, Rng& rng);

/// Row-stacked copy of a dataset for fast batch gathering.
struct StackedDataset {
  Tensor x, y, contexts;

  explicit StackedDataset(const Dataset& data)
      : x(data.inputs()), y(data.targets()), contexts(data.contexts()) {}
  model::PairBatch gather(const PairIndices& idx) const;
};

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows);

}  // namespace cazsl
