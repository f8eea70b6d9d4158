#include "dpanet/revin.hpp"

#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"

namespace dpanet {

namespace num = numerics;
using num::Tensor;

template <typename T>
Revin<T>::Revin(std::size_t channels, T eps, bool affine, ParameterList<T>& params)
    : channels_(channels), eps_(eps) {
  if (!(eps > T(0))) throw ConfigError("revin eps must be positive");
  if (affine) {
    gain_ = params.add("revin.gain", Tensor<T>::full({channels}, T(1)));
    bias_ = params.add("revin.bias", Tensor<T>::zeros({channels}));
  }
}

template <typename T>
std::pair<Tensor<T>, RevinState<T>> Revin<T>::normalize(const Tensor<T>& x) const {
  if (x.dim() != 3 || x.shape()[2] != channels_) {
    throw DimensionError("revin expects (B, L, " + std::to_string(channels_) + "), got " +
                         num::shape_str(x.shape()));
  }
  if (x.shape()[1] < 2) throw PreconditionError("revin needs a look-back of at least 2 steps");
  RevinState<T> state;
  state.eps = eps_;
  state.mean = num::mean_axis(x, 1, true);
  auto centered = num::sub(x, state.mean);
  auto variance = num::mean_axis(num::square(centered), 1, true);
  state.std = num::sqrt(num::add_scalar(variance, eps_));
  auto out = num::div(centered, state.std);
  if (affine()) {
    state.gain = gain_;
    state.bias = bias_;
    out = num::add(num::mul(out, gain_), bias_);
  }
  return {out, state};
}

template <typename T>
Tensor<T> Revin<T>::denormalize(const Tensor<T>& y, const RevinState<T>& state) const {
  if (y.dim() != 3 || y.shape()[0] != state.mean.shape()[0] || y.shape()[2] != state.mean.shape()[2]) {
    throw DimensionError("revin state " + num::shape_str(state.mean.shape()) + " does not match forecast " +
                         num::shape_str(y.shape()));
  }
  Tensor<T> out = y;
  if (state.gain.defined()) {
    for (auto g : state.gain.data()) {
      if (g == T(0)) throw PreconditionError("revin denormalize: singular affine (gain == 0)");
    }
    out = num::div(num::sub(out, state.bias), state.gain);
  }
  return num::add(num::mul(out, state.std), state.mean);
}

template class Revin<float>;
template class Revin<double>;

}  // namespace dpanet
