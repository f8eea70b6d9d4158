#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dpanet/numerics/tensor.hpp"

namespace dpanet::numerics {

struct GradcheckResult {
  /// max over checked entries of |analytic - numeric| / max(1, |numeric|)
  double worst_error = 0.0;
  std::size_t checked = 0;
  std::string worst_location;
};

/// Compares reverse-mode gradients of `loss` w.r.t. every entry of `leaves`
/// against central differences with step `step`. `loss` must rebuild its
/// graph from the current leaf values on every call.
GradcheckResult check_gradients(const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> leaves,
                                const std::vector<std::string>& names = {}, double step = 1e-5);

}  // namespace dpanet::numerics
