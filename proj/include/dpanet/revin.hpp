#pragma once

#include <utility>

#include "dpanet/numerics/tensor.hpp"
#include "dpanet/parameters.hpp"

namespace dpanet {

/// Statistics of one look-back batch plus the affine used to normalize it.
/// mean/std have shape (B, 1, C); gain/bias have shape (C) and are undefined
/// when the affine is disabled.
template <typename T>
struct RevinState {
  numerics::Tensor<T> mean;
  numerics::Tensor<T> std;
  numerics::Tensor<T> gain;
  numerics::Tensor<T> bias;
  T eps{};
};

/// Reversible instance normalization over (B, L, C) windows, statistics per
/// instance and channel.
template <typename T>
class Revin {
 public:
  Revin() = default;
  /// Registers revin.gain / revin.bias when `affine` is set.
  Revin(std::size_t channels, T eps, bool affine, ParameterList<T>& params);

  std::pair<numerics::Tensor<T>, RevinState<T>> normalize(const numerics::Tensor<T>& x) const;
  numerics::Tensor<T> denormalize(const numerics::Tensor<T>& y, const RevinState<T>& state) const;

  bool affine() const { return gain_.defined(); }
  const numerics::Tensor<T>& gain() const { return gain_; }
  const numerics::Tensor<T>& bias() const { return bias_; }

 private:
  std::size_t channels_ = 0;
  T eps_ = T(1e-5);
  numerics::Tensor<T> gain_;
  numerics::Tensor<T> bias_;
};

}  // namespace dpanet
