#include "dpanet/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dpanet::numerics {

GradcheckResult check_gradients(const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> leaves,
                                const std::vector<std::string>& names, double step) {
  for (auto& leaf : leaves) leaf.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  GradcheckResult result;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = loss().item();
      values[i] = original - step;
      const double down = loss().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      double error = std::abs(analytic[li][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(error)) error = std::numeric_limits<double>::infinity();
      ++result.checked;
      if (error > result.worst_error || result.worst_location.empty()) {
        result.worst_error = error;
        result.worst_location = (li < names.size() ? names[li] : "leaf" + std::to_string(li)) + "[" +
                                std::to_string(i) + "]";
      }
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return result;
}

}  // namespace dpanet::numerics
