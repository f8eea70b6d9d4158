#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "dpanet/numerics/tensor.hpp"

namespace dpanet::testing {

using numerics::Shape;
using numerics::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false, double lo = -1.0,
                        double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> values(numerics::shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

/// Naive O(L^2) one-sided DFT, evaluated directly from the definition in long double.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t length = x.size();
  std::vector<std::complex<double>> bins(length / 2 + 1);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    long double re = 0, im = 0;
    for (std::size_t n = 0; n < length; ++n) {
      const long double angle = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k * n) /
                                static_cast<long double>(length);
      re += x[n] * std::cos(angle);
      im += x[n] * std::sin(angle);
    }
    bins[k] = {static_cast<double>(re), static_cast<double>(im)};
  }
  return bins;
}

/// Naive inverse of a one-sided spectrum via the full Hermitian spectrum.
inline std::vector<double> naive_idft(const std::vector<std::complex<double>>& half, std::size_t length) {
  std::vector<std::complex<long double>> full(length);
  for (std::size_t k = 0; k < length; ++k) {
    if (k < half.size()) {
      full[k] = {half[k].real(), half[k].imag()};
    } else {
      full[k] = std::conj(std::complex<long double>(half[length - k].real(), half[length - k].imag()));
    }
  }
  std::vector<double> out(length);
  for (std::size_t n = 0; n < length; ++n) {
    long double acc = 0;
    for (std::size_t k = 0; k < length; ++k) {
      const long double angle =
          2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k * n) / static_cast<long double>(length);
      acc += full[k].real() * std::cos(angle) - full[k].imag() * std::sin(angle);
    }
    out[n] = static_cast<double>(acc / static_cast<long double>(length));
  }
  return out;
}

/// Central-difference oracle: worst |analytic - numeric| / max(1, |numeric|)
/// over every entry of every leaf.
inline double finite_difference_error(const std::function<Tensor<double>()>& loss,
                                      std::vector<Tensor<double>> leaves, double step = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const auto analytic = leaf.grad();
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = loss().item();
      values[i] = original - step;
      const double down = loss().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, std::isfinite(err) ? err : 1e300);
    }
  }
  return worst;
}

/// Fixed random projection so that a tensor-valued function becomes a scalar
/// loss with nontrivial upstream gradients.
inline Tensor<double> projection_weights(const Shape& shape, std::uint64_t seed) {
  return random_tensor<double>(shape, seed, false, -1.0, 1.0);
}

}  // namespace dpanet::testing
