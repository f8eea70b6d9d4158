#include "dpanet/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "dpanet/error.hpp"

namespace dpanet {

namespace {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const char* first = text.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<int> parse_int(std::string_view text) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace

std::optional<double> parse_datetime(const std::string& text) {
  // YYYY-MM-DD, optionally followed by ' ' or 'T' and HH:MM or HH:MM:SS.
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  const auto y = parse_int(std::string_view(text).substr(0, 4));
  const auto m = parse_int(std::string_view(text).substr(5, 2));
  const auto d = parse_int(std::string_view(text).substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  const std::chrono::year_month_day date{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*m)},
                                         std::chrono::day{static_cast<unsigned>(*d)}};
  if (!date.ok()) return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  if (text.size() > 10) {
    if ((text[10] != ' ' && text[10] != 'T') || (text.size() != 16 && text.size() != 19) || text[13] != ':') {
      return std::nullopt;
    }
    const auto h = parse_int(std::string_view(text).substr(11, 2));
    const auto mi = parse_int(std::string_view(text).substr(14, 2));
    if (!h || !mi || *h > 23 || *mi > 59) return std::nullopt;
    hh = *h;
    mm = *mi;
    if (text.size() == 19) {
      const auto s = parse_int(std::string_view(text).substr(17, 2));
      if (text[16] != ':' || !s || *s > 59) return std::nullopt;
      ss = *s;
    }
  }
  const auto days = std::chrono::sys_days(date).time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + hh * 3600.0 + mm * 60.0 + ss;
}

std::string format_datetime(double seconds) {
  const auto total = static_cast<long long>(std::llround(seconds));
  long long days = total / 86400;
  long long rem = total % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const std::chrono::year_month_day date{std::chrono::sys_days{std::chrono::days{days}}};
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%04d-%02u-%02u %02lld:%02lld:%02lld", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()), rem / 3600, (rem / 60) % 60,
                rem % 60);
  return buffer;
}

std::string format_timestamp(double value, TimestampFormat format) {
  if (format == TimestampFormat::datetime) return format_datetime(value);
  std::ostringstream out;
  out.precision(15);
  out << value;
  return out.str();
}

RawDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  RawDataset data;
  data.name = path.stem().string();

  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file, expected a header row");
  const auto header = split_fields(line);
  if (header.size() < 2) throw DataError(path.string() + ": header needs a timestamp column and at least one channel");
  data.channel_names.assign(header.begin() + 1, header.end());
  const std::size_t channels = data.channel_names.size();

  std::size_t line_number = 1;
  bool format_known = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = path.string() + ": row " + std::to_string(line_number);
    if (fields.size() != channels + 1) {
      throw DataError(where + " has " + std::to_string(fields.size()) + " columns, header has " +
                      std::to_string(channels + 1));
    }
    if (!format_known) {
      data.timestamp_format = parse_datetime(fields[0]) ? TimestampFormat::datetime : TimestampFormat::numeric;
      format_known = true;
    }
    const auto stamp =
        data.timestamp_format == TimestampFormat::datetime ? parse_datetime(fields[0]) : parse_number(fields[0]);
    if (!stamp) throw DataError(where + ", column 1 (" + header[0] + "): unparseable timestamp '" + fields[0] + "'");
    if (!data.timestamps.empty() && !(*stamp > data.timestamps.back())) {
      throw DataError(where + ": timestamp '" + fields[0] + "' is not after the previous row");
    }
    data.timestamps.push_back(*stamp);
    for (std::size_t c = 0; c < channels; ++c) {
      const auto value = parse_number(fields[c + 1]);
      if (!value) {
        throw DataError(where + ", column " + std::to_string(c + 2) + " (" + data.channel_names[c] + "): " +
                        (fields[c + 1].empty() ? std::string("empty cell") : "unparseable value '" + fields[c + 1] + "'"));
      }
      data.values.push_back(*value);
    }
  }
  if (data.timestamps.empty()) throw DataError(path.string() + ": no data rows");
  return data;
}

void write_csv(const std::filesystem::path& path, const RawDataset& data, const std::string& timestamp_header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << timestamp_header;
  for (const auto& name : data.channel_names) out << ',' << name;
  out << '\n';
  char buffer[32];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    out << format_timestamp(data.timestamps[r], data.timestamp_format);
    for (std::size_t c = 0; c < data.channels(); ++c) {
      // Shortest text that parses back to the same double.
      const auto result = std::to_chars(buffer, buffer + sizeof buffer, data.at(r, c));
      out << ',' << std::string_view(buffer, result.ptr);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

std::string to_string(SplitPolicy policy) {
  switch (policy) {
    case SplitPolicy::ett_hourly: return "ett_hourly";
    case SplitPolicy::ett_minutely: return "ett_minutely";
    case SplitPolicy::ratio_702010: return "ratio_702010";
  }
  return "ratio_702010";
}

SplitPolicy parse_split_policy(const std::string& text) {
  for (auto p : {SplitPolicy::ett_hourly, SplitPolicy::ett_minutely, SplitPolicy::ratio_702010}) {
    if (text == to_string(p)) return p;
  }
  throw ConfigError("unknown split policy '" + text + "' (expected ett_hourly, ett_minutely or ratio_702010)");
}

SplitRanges chronological_split(std::size_t rows, SplitPolicy policy, std::size_t input_length,
                                std::size_t pred_length) {
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  switch (policy) {
    case SplitPolicy::ett_hourly:
    case SplitPolicy::ett_minutely: {
      const std::size_t unit = policy == SplitPolicy::ett_hourly ? 1 : 4;
      n_train = 8640 * unit;
      n_val = 2880 * unit;
      n_test = 2880 * unit;
      if (rows < n_train + n_val + n_test) {
        throw DataError(to_string(policy) + " split needs " + std::to_string(n_train + n_val + n_test) +
                        " rows, dataset has " + std::to_string(rows));
      }
      break;
    }
    case SplitPolicy::ratio_702010:
      n_train = rows * 7 / 10;
      n_test = rows * 2 / 10;
      n_val = rows - n_train - n_test;
      break;
  }
  SplitRanges ranges;
  ranges.train = {0, n_train, 0};
  const std::size_t val_end = n_train + n_val;
  const std::size_t test_end = val_end + n_test;
  const std::size_t val_lookback = std::min(input_length, n_train);
  const std::size_t test_lookback = std::min(input_length, val_end);
  ranges.val = {n_train - val_lookback, val_end, val_lookback};
  ranges.test = {val_end - test_lookback, test_end, test_lookback};

  const std::size_t need = input_length + pred_length;
  std::vector<std::string> problems;
  for (const auto& [name, r] : {std::pair{"train", ranges.train}, std::pair{"val", ranges.val},
                                std::pair{"test", ranges.test}}) {
    if (r.end - r.begin < need) {
      problems.push_back(std::string(name) + " split has " + std::to_string(r.end - r.begin) + " rows, needs L_in + L_pred = " +
                         std::to_string(need));
    }
  }
  if (!problems.empty()) {
    std::string message = "dataset of " + std::to_string(rows) + " rows is too short: ";
    for (std::size_t i = 0; i < problems.size(); ++i) message += (i ? "; " : "") + problems[i];
    throw DataError(message);
  }
  return ranges;
}

// ---------------------------------------------------------------------------

Scaler Scaler::fit(const RawDataset& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.rows()) throw PreconditionError("scaler fit range is empty or out of bounds");
  const std::size_t channels = data.channels();
  Scaler scaler;
  scaler.mean.assign(channels, 0.0);
  scaler.std.assign(channels, 0.0);
  const double n = static_cast<double>(end - begin);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (std::size_t r = begin; r < end; ++r) mean += data.at(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = begin; r < end; ++r) var += (data.at(r, c) - mean) * (data.at(r, c) - mean);
    var /= n;
    scaler.mean[c] = mean;
    scaler.std[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return scaler;
}

std::vector<double> Scaler::transform(const RawDataset& data) const {
  if (data.channels() != mean.size()) throw DimensionError("scaler channel count does not match dataset");
  std::vector<double> out(data.values.size());
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < data.channels(); ++c) {
      out[r * data.channels() + c] = (data.at(r, c) - mean[c]) / std[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

WindowSampler::WindowSampler(const std::vector<double>* values, std::size_t channels, SplitRange range,
                             std::size_t input_length, std::size_t pred_length)
    : values_(values),
      channels_(channels),
      range_(range),
      input_length_(input_length),
      pred_length_(pred_length),
      count_(0) {
  if (!values_ || channels_ == 0 || values_->size() % channels_ != 0 || range.end * channels_ > values_->size()) {
    throw PreconditionError("window sampler range exceeds the table");
  }
  const std::size_t span = range.end - range.begin;
  if (span >= input_length + pred_length) count_ = span - input_length - pred_length + 1;
}

std::vector<std::vector<std::size_t>> WindowSampler::batches(std::size_t batch_size,
                                                             std::optional<std::uint64_t> seed) const {
  if (batch_size == 0) throw PreconditionError("batch size must be positive");
  std::vector<std::size_t> order(count_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (seed) {
    std::mt19937_64 rng(*seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  return out;
}

template <typename T>
SeriesBatch<T> WindowSampler::make_batch(const std::vector<std::size_t>& windows) const {
  if (windows.empty()) throw PreconditionError("empty batch");
  std::vector<T> inputs, targets;
  inputs.reserve(windows.size() * input_length_ * channels_);
  targets.reserve(windows.size() * pred_length_ * channels_);
  const auto& values = *values_;
  for (auto w : windows) {
    if (w >= count_) throw PreconditionError("window index " + std::to_string(w) + " out of range");
    const std::size_t start = window_start(w);
    for (std::size_t r = start; r < start + input_length_; ++r) {
      for (std::size_t c = 0; c < channels_; ++c) inputs.push_back(static_cast<T>(values[r * channels_ + c]));
    }
    for (std::size_t r = start + input_length_; r < start + input_length_ + pred_length_; ++r) {
      for (std::size_t c = 0; c < channels_; ++c) targets.push_back(static_cast<T>(values[r * channels_ + c]));
    }
  }
  const std::size_t b = windows.size();
  return {numerics::Tensor<T>::from_data({b, input_length_, channels_}, std::move(inputs)),
          numerics::Tensor<T>::from_data({b, pred_length_, channels_}, std::move(targets))};
}

template SeriesBatch<float> WindowSampler::make_batch(const std::vector<std::size_t>&) const;
template SeriesBatch<double> WindowSampler::make_batch(const std::vector<std::size_t>&) const;

}  // namespace dpanet
