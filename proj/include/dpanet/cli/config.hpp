#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dpanet/data.hpp"
#include "dpanet/model.hpp"
#include "dpanet/trainer.hpp"

namespace dpanet::cli {

struct DataSettings {
  std::string source = "csv";  // csv | synthetic
  std::string path;            // relative paths resolve against DPANET_DATA_DIR
  SplitPolicy split = SplitPolicy::ett_hourly;
  std::size_t synth_rows = 4000;
  std::size_t synth_channels = 2;
  std::vector<double> synth_periods{24, 96};
  std::vector<double> synth_amplitudes{1, 1};
  double synth_noise = 0.0;
};

/// Every typed setting a command can read.
struct RunSettings {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataSettings data;
  std::size_t eval_batch_size = 64;
  std::vector<std::size_t> ablate_horizons{96};
  std::vector<std::string> ablate_variants{"full", "temporal_only", "frequency_only", "no_cross_fusion"};
};

/// Flat key/value configuration with dotted keys. Files hold `key = value`
/// lines; `[section]` headers prefix the keys that follow; `#` starts a comment.
class Config {
 public:
  Config();

  /// Reads a file; unknown keys and malformed lines are collected, not thrown.
  void load_file(const std::filesystem::path& path);
  /// Applies one `key=value` override.
  void set(const std::string& assignment, const std::string& origin = "--set");

  const std::string& get(const std::string& key) const;
  bool is_known(const std::string& key) const;

  /// Typed settings. Throws ConfigError listing every problem found, including
  /// those collected while loading.
  RunSettings resolve() const;

  /// Sorted `key = value` lines of every key; loading them reproduces the run.
  std::string serialize() const;
  void write(const std::filesystem::path& path) const;

  /// Every key with its default and a one-line description.
  static std::string reference();

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> problems_;
};

/// DPANET_DATA_DIR joined with `path` when `path` is relative and the
/// variable is set; `path` otherwise.
std::filesystem::path resolve_data_path(const std::string& path);

}  // namespace dpanet::cli
