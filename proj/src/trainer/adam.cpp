#include <cmath>

#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/trainer.hpp"

namespace dpanet {

namespace num = numerics;
using num::Tensor;

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss shape mismatch: " + num::shape_str(pred.shape()) + " vs " +
                         num::shape_str(target.shape()));
  }
  return num::mean(num::square(num::sub(pred, target)));
}

template <typename T>
Adam<T>::Adam(ParameterList<T>& params, AdamConfig config) : params_(&params), config_(config) {
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(config.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  for (const auto& p : params.entries()) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  auto& entries = params_->entries();
  if (entries.size() != m_.size()) throw PreconditionError("parameter list changed after optimizer creation");

  double squared = 0.0;
  for (const auto& p : entries) {
    if (!p.value.has_grad()) continue;
    for (auto g : p.value.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("non-finite gradient in parameter " + p.name + " at optimizer step " +
                             std::to_string(steps_ + 1));
      }
      squared += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  last_norm_ = std::sqrt(squared);
  const double clip = config_.grad_clip_norm > 0.0 && last_norm_ > config_.grad_clip_norm
                          ? config_.grad_clip_norm / last_norm_
                          : 1.0;

  ++steps_;
  const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].value;
    if (!p.has_grad()) continue;
    const auto grad = p.grad();
    auto values = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = static_cast<double>(grad[k]) * clip;
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] = static_cast<T>(static_cast<double>(values[k]) - config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
}

template Tensor<float> mse_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mse_loss(const Tensor<double>&, const Tensor<double>&);
template class Adam<float>;
template class Adam<double>;

}  // namespace dpanet
