#include <cmath>
#include <numbers>
#include <random>

#include "dpanet/data.hpp"
#include "dpanet/error.hpp"

namespace dpanet {

RawDataset synth_multiperiodic(std::size_t rows, std::size_t channels, const std::vector<double>& periods,
                               const std::vector<double>& amplitudes, double noise_sigma, std::uint64_t seed) {
  std::vector<std::string> problems;
  if (rows == 0) problems.emplace_back("rows must be positive");
  if (channels == 0) problems.emplace_back("channels must be positive");
  if (periods.empty()) problems.emplace_back("at least one period is required");
  if (periods.size() != amplitudes.size()) problems.emplace_back("periods and amplitudes differ in length");
  for (auto p : periods) {
    if (!(p > 0.0)) problems.emplace_back("periods must be positive");
  }
  if (!(noise_sigma >= 0.0)) problems.emplace_back("noise sigma must be nonnegative");
  if (!problems.empty()) throw ConfigError(problems);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> phases(channels * periods.size());
  for (auto& p : phases) p = phase_dist(rng);

  RawDataset data;
  data.name = "synthetic";
  data.timestamp_format = TimestampFormat::numeric;
  for (std::size_t c = 0; c < channels; ++c) data.channel_names.push_back("ch" + std::to_string(c));
  data.timestamps.resize(rows);
  data.values.resize(rows * channels);
  for (std::size_t t = 0; t < rows; ++t) {
    data.timestamps[t] = static_cast<double>(t);
    for (std::size_t c = 0; c < channels; ++c) {
      double value = 0.0;
      for (std::size_t j = 0; j < periods.size(); ++j) {
        value += amplitudes[j] * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / periods[j] +
                                          phases[c * periods.size() + j]);
      }
      if (noise_sigma > 0.0) value += noise_sigma * noise(rng);
      data.values[t * channels + c] = value;
    }
  }
  return data;
}

}  // namespace dpanet
