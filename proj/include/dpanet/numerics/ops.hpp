#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "dpanet/numerics/tensor.hpp"

namespace dpanet::numerics {

// ---------------------------------------------------------------------------
// Elementwise (numpy-style broadcasting for binary ops)
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
/// Exact (erf-based) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim = false);

// ---------------------------------------------------------------------------
// Linear algebra and layout
// ---------------------------------------------------------------------------

/// (..., m, k) x (..., k, n) -> (..., m, n); leading extents broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x (..., in) times weight (in, out) plus optional bias (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);

// ---------------------------------------------------------------------------
// Network kernels
// ---------------------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Normalizes the last axis; gain and bias have that axis' extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// Kernel 2 / stride 2 average pooling along axis -2 of (..., L, C). L must be even.
template <typename T> Tensor<T> avg_pool1d(const Tensor<T>& x);

/// Align-corners linear interpolation along axis -2, (..., L, d) -> (..., 2L, d).
template <typename T> Tensor<T> upsample_linear(const Tensor<T>& x, std::size_t target_len);

/// Real DFT along axis -2: (..., L, C) -> (..., floor(L/2)+1, C, 2), last axis (re, im).
/// Unnormalized forward transform.
template <typename T> Tensor<T> rfft(const Tensor<T>& x);

/// Inverse of rfft with 1/L normalization: (..., N, C, 2) -> (..., L, C).
/// Imaginary parts of the DC and (even L) Nyquist bins are ignored.
template <typename T> Tensor<T> irfft(const Tensor<T>& spectrum, std::size_t length);

/// Inverted dropout. Identity when `rate` is 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng);

}  // namespace dpanet::numerics
