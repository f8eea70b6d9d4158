#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace dpanet::numerics {

/// One-sided spectrum of a real sequence of length `origin_length`.
template <typename T>
struct ComplexSpectrum {
  std::vector<std::complex<T>> bins;
  std::size_t origin_length = 0;
};

inline std::size_t rfft_bins(std::size_t length) { return length / 2 + 1; }

/// Cached cos/sin of 2*pi*m/L for m in [0, L). Lookups use (k*n) mod L so the
/// phase is exact for every bin/sample pair.
struct DftTable {
  std::size_t length = 0;
  std::vector<double> cos;
  std::vector<double> sin;
};

/// Thread-local cache; the returned table outlives the call.
const DftTable& dft_table(std::size_t length);

/// X[k] = sum_n x[n] exp(-2 pi i k n / L), k = 0..floor(L/2). Requires L >= 2.
template <typename T> ComplexSpectrum<T> rfft(std::span<const T> signal);
template <typename T> ComplexSpectrum<T> rfft(const std::vector<T>& signal) {
  return rfft(std::span<const T>(signal));
}

/// Exact inverse of rfft (1/L carried here). Rejects spectra whose bin count
/// disagrees with origin_length or whose DC / Nyquist bins are not real.
template <typename T> std::vector<T> irfft(const ComplexSpectrum<T>& spectrum);

}  // namespace dpanet::numerics
