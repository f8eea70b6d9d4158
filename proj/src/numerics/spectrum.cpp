#include "dpanet/numerics/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "dpanet/error.hpp"

namespace dpanet::numerics {

const DftTable& dft_table(std::size_t length) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<DftTable>> cache;
  auto& slot = cache[length];
  if (!slot) {
    slot = std::make_unique<DftTable>();
    slot->length = length;
    slot->cos.resize(length);
    slot->sin.resize(length);
    for (std::size_t m = 0; m < length; ++m) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(length);
      slot->cos[m] = std::cos(angle);
      slot->sin[m] = std::sin(angle);
    }
  }
  return *slot;
}

template <typename T>
ComplexSpectrum<T> rfft(std::span<const T> signal) {
  const std::size_t length = signal.size();
  if (length < 2) throw PreconditionError("rfft requires at least 2 samples");
  const auto& table = dft_table(length);
  ComplexSpectrum<T> out;
  out.origin_length = length;
  out.bins.resize(rfft_bins(length));
  for (std::size_t k = 0; k < out.bins.size(); ++k) {
    double re = 0.0;
    double im = 0.0;
    std::size_t phase = 0;
    for (std::size_t n = 0; n < length; ++n) {
      const double v = static_cast<double>(signal[n]);
      re += v * table.cos[phase];
      im -= v * table.sin[phase];
      phase += k;
      if (phase >= length) phase -= length;
    }
    out.bins[k] = {static_cast<T>(re), static_cast<T>(im)};
  }
  // Exactly real by symmetry.
  out.bins[0].imag(T(0));
  if (length % 2 == 0) out.bins.back().imag(T(0));
  return out;
}

template <typename T>
std::vector<T> irfft(const ComplexSpectrum<T>& spectrum) {
  const std::size_t length = spectrum.origin_length;
  if (length < 2 || spectrum.bins.size() != rfft_bins(length)) {
    throw MalformedSpectrumError("spectrum has " + std::to_string(spectrum.bins.size()) +
                                 " bins, origin length " + std::to_string(length) + " needs " +
                                 std::to_string(rfft_bins(length)));
  }
  double magnitude = 0.0;
  for (const auto& bin : spectrum.bins) magnitude = std::max(magnitude, static_cast<double>(std::abs(bin)));
  const double tol = 100.0 * std::numeric_limits<T>::epsilon() * (1.0 + magnitude);
  if (std::abs(static_cast<double>(spectrum.bins.front().imag())) > tol) {
    throw MalformedSpectrumError("DC bin has a nonzero imaginary part");
  }
  const bool even = length % 2 == 0;
  if (even && std::abs(static_cast<double>(spectrum.bins.back().imag())) > tol) {
    throw MalformedSpectrumError("Nyquist bin has a nonzero imaginary part");
  }
  const auto& table = dft_table(length);
  const std::size_t last_interior = (length - 1) / 2;
  std::vector<T> out(length);
  for (std::size_t n = 0; n < length; ++n) {
    double acc = static_cast<double>(spectrum.bins[0].real());
    if (even) {
      const double nyq = static_cast<double>(spectrum.bins.back().real());
      acc += (n % 2 == 0) ? nyq : -nyq;
    }
    std::size_t phase = n;
    for (std::size_t k = 1; k <= last_interior; ++k) {
      acc += 2.0 * (static_cast<double>(spectrum.bins[k].real()) * table.cos[phase] -
                    static_cast<double>(spectrum.bins[k].imag()) * table.sin[phase]);
      phase += n;
      if (phase >= length) phase -= length;
    }
    out[n] = static_cast<T>(acc / static_cast<double>(length));
  }
  return out;
}

template ComplexSpectrum<float> rfft(std::span<const float>);
template ComplexSpectrum<double> rfft(std::span<const double>);
template std::vector<float> irfft(const ComplexSpectrum<float>&);
template std::vector<double> irfft(const ComplexSpectrum<double>&);

}  // namespace dpanet::numerics
