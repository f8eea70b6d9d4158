#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dpanet/numerics/tensor.hpp"

namespace dpanet {

/// Which spectral band feeds pyramid level 0 (the full-resolution level).
enum class BandOrder { low_first, high_first };

std::string to_string(BandOrder order);
BandOrder parse_band_order(const std::string& text);

/// Disjoint partition of the RFFT bins [0, N) into S bands:
/// band s covers [edges[s], edges[s+1]).
struct BandPartition {
  std::size_t num_levels = 0;
  std::vector<std::size_t> edges;

  std::size_t num_bins() const { return edges.back(); }
  std::size_t width(std::size_t band) const { return edges[band + 1] - edges[band]; }
};

/// Logarithmically spaced bands: interior edges round(N^(s/S)), forced
/// strictly increasing, then boundary bins are shifted upward until band
/// widths are nondecreasing. Throws ConfigError when N < S or S < 2.
BandPartition make_band_partition(std::size_t num_bins, std::size_t num_levels);

/// Throws ConfigError unless S >= 2 and input_length is divisible by 2^(S-1).
void validate_pyramid_shape(std::size_t input_length, std::size_t num_levels);

template <typename T>
struct DualPyramid {
  std::vector<numerics::Tensor<T>> temporal;   // level s: (B, L/2^s, C)
  std::vector<numerics::Tensor<T>> frequency;  // level s: (B, L/2^s, C)
};

/// Level 0 is `x` itself; level s is level s-1 average-pooled by 2.
template <typename T>
std::vector<numerics::Tensor<T>> build_temporal_pyramid(const numerics::Tensor<T>& x, std::size_t num_levels);

/// Full-length band-pass reconstructions irfft(rfft(x) * mask_s), band order
/// as in the partition (lowest frequencies first).
template <typename T>
std::vector<numerics::Tensor<T>> band_reconstructions(const numerics::Tensor<T>& x,
                                                      const BandPartition& partition);

/// Band reconstructions pooled s times so that level s matches the temporal
/// pyramid's shape.
template <typename T>
std::vector<numerics::Tensor<T>> build_frequency_pyramid(const numerics::Tensor<T>& x,
                                                         const BandPartition& partition,
                                                         BandOrder order = BandOrder::low_first);

template <typename T>
DualPyramid<T> build_dual_pyramid(const numerics::Tensor<T>& x, std::size_t num_levels,
                                  BandOrder order = BandOrder::low_first);

}  // namespace dpanet
