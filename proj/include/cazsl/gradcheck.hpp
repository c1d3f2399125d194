#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cazsl/autodiff.hpp"
#include "cazsl/tensor.hpp"

namespace cazsl {

/// Central-difference comparison against the tape's analytic gradients.
struct GradCheckOptions {
  double epsilon = 1e-5;
  double op_tolerance = 1e-4;
  double loss_tolerance = 1e-3;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Larger tensors are checked on this many random coordinates.
  std::size_t max_coords_per_tensor = 32;
};

struct GradCheckEntry {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +/- probes straddle a ReLU or distance kink.
  std::size_t skipped = 0;
  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double seconds = 0.0;
  bool passed() const;
  std::size_t failures() const;
};

/// Builds a scalar from graph leaves bound to `inputs`.
using LeafFunction = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;
/// Builds a scalar from parameters read out of `store`.
using StoreFunction = std::function<ad::Var(ad::Graph&, const ad::ParameterStore&)>;

double relative_error(double analytic, double numeric, double floor);

/// Checks d f / d inputs for every coordinate of every input.
GradCheckEntry check_leaf_gradients(const std::string& name, const LeafFunction& f,
                                    std::vector<Tensor> inputs, double tolerance,
                                    const GradCheckOptions& opts = {});

/// Checks every parameter of `store`, subsampling large tensors with `rng`.
GradCheckEntry check_store_gradients(const std::string& name, const StoreFunction& f,
                                     ad::ParameterStore store, double tolerance, Rng& rng,
                                     const GradCheckOptions& opts = {});

/// Every differentiable operation plus the composed pair loss of each
/// variant, for each seed.
GradCheckReport run_gradcheck_suite(std::span<const std::uint64_t> seeds,
                                    const GradCheckOptions& opts = {});

std::string format_report(const GradCheckReport& report, bool verbose);

}  // namespace cazsl
