#include "dpanet/pyramid.hpp"

#include <cmath>

#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/numerics/spectrum.hpp"

namespace dpanet {

namespace num = numerics;
using num::Tensor;

std::string to_string(BandOrder order) {
  return order == BandOrder::low_first ? "low_first" : "high_first";
}

BandOrder parse_band_order(const std::string& text) {
  if (text == "low_first") return BandOrder::low_first;
  if (text == "high_first") return BandOrder::high_first;
  throw ConfigError("unknown band order '" + text + "' (expected low_first or high_first)");
}

BandPartition make_band_partition(std::size_t num_bins, std::size_t num_levels) {
  if (num_levels < 2) throw ConfigError("band partition needs at least 2 levels");
  if (num_bins < num_levels) {
    throw ConfigError("cannot split " + std::to_string(num_bins) + " bins into " + std::to_string(num_levels) +
                      " nonempty bands");
  }
  BandPartition partition;
  partition.num_levels = num_levels;
  partition.edges.assign(num_levels + 1, 0);
  const double n = static_cast<double>(num_bins);
  for (std::size_t s = 1; s < num_levels; ++s) {
    const auto raw = static_cast<std::size_t>(
        std::llround(std::pow(n, static_cast<double>(s) / static_cast<double>(num_levels))));
    partition.edges[s] = std::max(raw, partition.edges[s - 1] + 1);
  }
  partition.edges[num_levels] = num_bins;

  // Rounding can leave a band narrower than the one below it (N=10, S=4
  // gives widths 2,1,3,4). Move the upper edge of the offending lower band
  // down one bin until widths are nondecreasing; every move keeps widths >= 1
  // and strictly raises sum(s * width_s), so the loop terminates.
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t s = num_levels - 1; s-- > 0;) {
      if (partition.width(s) > partition.width(s + 1)) {
        --partition.edges[s + 1];
        changed = true;
      }
    }
  }
  return partition;
}

void validate_pyramid_shape(std::size_t input_length, std::size_t num_levels) {
  if (num_levels < 2) throw ConfigError("pyramid needs S >= 2 levels, got " + std::to_string(num_levels));
  if (num_levels > 30) throw ConfigError("pyramid depth S=" + std::to_string(num_levels) + " is unreasonable");
  const std::size_t factor = std::size_t{1} << (num_levels - 1);
  if (input_length % factor != 0) {
    throw ConfigError("L_in mod 2^(S-1) must be 0: L_in=" + std::to_string(input_length) + " is not divisible by " +
                      std::to_string(factor) + " (S=" + std::to_string(num_levels) + ")");
  }
}

template <typename T>
std::vector<Tensor<T>> build_temporal_pyramid(const Tensor<T>& x, std::size_t num_levels) {
  if (x.dim() != 3) throw DimensionError("temporal pyramid expects (B, L, C), got " + num::shape_str(x.shape()));
  validate_pyramid_shape(x.shape()[1], num_levels);
  std::vector<Tensor<T>> levels{x};
  for (std::size_t s = 1; s < num_levels; ++s) levels.push_back(num::avg_pool1d(levels.back()));
  return levels;
}

template <typename T>
std::vector<Tensor<T>> band_reconstructions(const Tensor<T>& x, const BandPartition& partition) {
  if (x.dim() != 3) throw DimensionError("frequency pyramid expects (B, L, C), got " + num::shape_str(x.shape()));
  const std::size_t length = x.shape()[1];
  const std::size_t bins = num::rfft_bins(length);
  if (partition.num_bins() != bins) {
    throw ConfigError("band partition covers " + std::to_string(partition.num_bins()) + " bins but L=" +
                      std::to_string(length) + " has " + std::to_string(bins));
  }
  auto spectrum = num::rfft(x);
  std::vector<Tensor<T>> bands;
  bands.reserve(partition.num_levels);
  for (std::size_t s = 0; s < partition.num_levels; ++s) {
    std::vector<T> mask(bins, T(0));
    for (std::size_t k = partition.edges[s]; k < partition.edges[s + 1]; ++k) mask[k] = T(1);
    auto masked = num::mul(spectrum, Tensor<T>::from_data({bins, 1, 1}, std::move(mask)));
    bands.push_back(num::irfft(masked, length));
  }
  return bands;
}

template <typename T>
std::vector<Tensor<T>> build_frequency_pyramid(const Tensor<T>& x, const BandPartition& partition,
                                               BandOrder order) {
  auto bands = band_reconstructions(x, partition);
  const std::size_t levels = bands.size();
  validate_pyramid_shape(x.shape()[1], levels);
  std::vector<Tensor<T>> pyramid;
  pyramid.reserve(levels);
  for (std::size_t s = 0; s < levels; ++s) {
    Tensor<T> level = order == BandOrder::low_first ? bands[s] : bands[levels - 1 - s];
    for (std::size_t p = 0; p < s; ++p) level = num::avg_pool1d(level);
    pyramid.push_back(level);
  }
  return pyramid;
}

template <typename T>
DualPyramid<T> build_dual_pyramid(const Tensor<T>& x, std::size_t num_levels, BandOrder order) {
  if (x.dim() != 3) throw DimensionError("dual pyramid expects (B, L, C), got " + num::shape_str(x.shape()));
  validate_pyramid_shape(x.shape()[1], num_levels);
  const auto partition = make_band_partition(num::rfft_bins(x.shape()[1]), num_levels);
  return {build_temporal_pyramid(x, num_levels), build_frequency_pyramid(x, partition, order)};
}

#define DPANET_INSTANTIATE_PYRAMID(T)                                                                      \
  template std::vector<Tensor<T>> build_temporal_pyramid(const Tensor<T>&, std::size_t);                   \
  template std::vector<Tensor<T>> band_reconstructions(const Tensor<T>&, const BandPartition&);            \
  template std::vector<Tensor<T>> build_frequency_pyramid(const Tensor<T>&, const BandPartition&, BandOrder); \
  template DualPyramid<T> build_dual_pyramid(const Tensor<T>&, std::size_t, BandOrder);

DPANET_INSTANTIATE_PYRAMID(float)
DPANET_INSTANTIATE_PYRAMID(double)

#undef DPANET_INSTANTIATE_PYRAMID

}  // namespace dpanet
