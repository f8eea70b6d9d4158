#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpanet/numerics/tensor.hpp"

namespace dpanet {

enum class TimestampFormat { datetime, numeric };

/// Row-major (rows x channels) table of observations.
struct RawDataset {
  std::string name;
  TimestampFormat timestamp_format = TimestampFormat::numeric;
  std::vector<double> timestamps;  // seconds since epoch for datetime, raw value otherwise
  std::vector<std::string> channel_names;
  std::vector<double> values;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t channels() const { return channel_names.size(); }
  double at(std::size_t row, std::size_t channel) const { return values[row * channels() + channel]; }
};

/// Parses "YYYY-MM-DD[ HH:MM[:SS]]" into seconds since 1970-01-01, or nullopt.
std::optional<double> parse_datetime(const std::string& text);
std::string format_datetime(double seconds);
std::string format_timestamp(double value, TimestampFormat format);

/// Header row, first column timestamp, remaining columns numeric. Throws
/// IoError when unreadable and DataError naming the offending row/column.
RawDataset load_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const RawDataset& data, const std::string& timestamp_header = "date");

enum class SplitPolicy { ett_hourly, ett_minutely, ratio_702010 };
std::string to_string(SplitPolicy policy);
SplitPolicy parse_split_policy(const std::string& text);

/// Rows [begin, end) of the source table. The first `lookback` rows belong to
/// the preceding split and only feed inputs of the first windows.
struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t lookback = 0;

  std::size_t own_rows() const { return end - begin - lookback; }
};

struct SplitRanges {
  SplitRange train, val, test;
};

/// Contiguous chronological split. Throws DataError when the table is too
/// short for the policy or any split holds fewer than L_in + L_pred rows.
SplitRanges chronological_split(std::size_t rows, SplitPolicy policy, std::size_t input_length,
                                std::size_t pred_length);

/// Per-channel z-score fitted on one row range (population std).
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  static Scaler fit(const RawDataset& data, std::size_t begin, std::size_t end);
  /// Standardized copy of the whole table.
  std::vector<double> transform(const RawDataset& data) const;
  double inverse(double value, std::size_t channel) const { return value * std[channel] + mean[channel]; }
};

template <typename T>
struct SeriesBatch {
  numerics::Tensor<T> inputs;   // (B, L_in, C)
  numerics::Tensor<T> targets;  // (B, L_pred, C)
};

/// Sliding windows with stride 1 over one split of a standardized table.
class WindowSampler {
 public:
  WindowSampler(const std::vector<double>* values, std::size_t channels, SplitRange range, std::size_t input_length,
                std::size_t pred_length);

  std::size_t window_count() const { return count_; }
  /// First input row of window i in table coordinates.
  std::size_t window_start(std::size_t index) const { return range_.begin + index; }
  std::size_t input_length() const { return input_length_; }
  std::size_t pred_length() const { return pred_length_; }
  std::size_t channels() const { return channels_; }

  /// Window indices grouped into batches; the last batch may be partial.
  /// Shuffled by `seed` when given, sequential otherwise.
  std::vector<std::vector<std::size_t>> batches(std::size_t batch_size, std::optional<std::uint64_t> seed) const;

  template <typename T>
  SeriesBatch<T> make_batch(const std::vector<std::size_t>& windows) const;

 private:
  const std::vector<double>* values_;
  std::size_t channels_;
  SplitRange range_;
  std::size_t input_length_;
  std::size_t pred_length_;
  std::size_t count_;
};

/// channel c = sum_j amplitudes[j] * sin(2 pi t / periods[j] + phase_{c,j}) + N(0, noise_sigma^2),
/// phases uniform in [0, 2 pi) drawn from `seed`.
RawDataset synth_multiperiodic(std::size_t rows, std::size_t channels, const std::vector<double>& periods,
                               const std::vector<double>& amplitudes, double noise_sigma, std::uint64_t seed);

}  // namespace dpanet
