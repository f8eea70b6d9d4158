#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dpanet/model.hpp"

namespace dpanet::cli {

struct ComponentCheck {
  std::string component;
  double worst_error = 0.0;
  std::size_t checked = 0;
  std::string worst_location;
};

struct GradcheckOptions {
  double tolerance = 1e-3;
  double step = 1e-5;
  std::uint64_t seed = 0;
  /// Kernel whose backward pass is corrupted while the suite runs.
  std::optional<std::string> inject_fault;
};

/// Small double-precision model used by the end-to-end checks.
ModelConfig gradcheck_model_config();

/// Kernels that honour the fault-injection hook.
const std::vector<std::string>& faultable_kernels();

/// Central-difference check of every differentiable kernel, each model module,
/// and each variant of the small model end to end.
std::vector<ComponentCheck> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace dpanet::cli
