#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afp/autodiff.hpp"

namespace afp {

struct GradCheckConfig {
  double h = 1e-3;
  double tolerance = 1e-4;
  int samples_per_input = 24;  // coordinates probed per leaf (all if smaller)
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;
  /// Coordinates whose ±h perturbation crossed a relu kink or a bilinear
  /// cell boundary; finite differences are meaningless there.
  int skipped = 0;
  bool passed = false;
};

/// Builds a scalar loss from the given leaves (one Var per leaf, same order).
using LossBuilder = std::function<ad::Var(ad::Graph<double>&, const std::vector<ad::Var>&)>;

/// Central differences of `build` against reverse-mode gradients for every
/// leaf in `leaves`.
GradCheckResult check_gradient(const std::string& name, const std::vector<TensorD>& leaves,
                               const LossBuilder& build, const GradCheckConfig& cfg);

/// Every differentiable op plus composite chains (patch warping, two-step
/// unrolled predictor, classifier head).
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckConfig& cfg = {});

}  // namespace afp
