#include "dpanet/cli/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dpanet/error.hpp"

namespace dpanet::cli {

namespace {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* description;
};

// clang-format off
constexpr KeySpec kKeys[] = {
    {"seed", "0", "single source of randomness (init, shuffling, dropout, synthetic data)"},
    {"model.L_in", "96", "look-back length; divisible by 2^(S-1)"},
    {"model.L_pred", "96", "forecast horizon"},
    {"model.C", "0", "channel count; 0 infers it from the dataset"},
    {"model.S", "4", "pyramid levels"},
    {"model.d_model", "64", "embedding width"},
    {"model.heads", "4", "attention heads; must divide d_model"},
    {"model.d_ff", "128", "fusion FFN hidden width"},
    {"model.dropout", "0.1", "dropout on attention weights and FFN hidden units"},
    {"model.variant", "full", "full | temporal_only | frequency_only | no_cross_fusion"},
    {"model.revin_affine", "true", "learnable RevIN gain/bias"},
    {"model.revin_eps", "1e-05", "RevIN variance floor"},
    {"model.norm_eps", "1e-05", "layer norm epsilon"},
    {"model.band_order", "low_first", "low_first | high_first: band paired with the finest level"},
    {"model.pooling", "mean", "mean | last: sequence pooling before the head"},
    {"train.lr", "0.0001", "Adam learning rate"},
    {"train.beta1", "0.9", "Adam first-moment decay"},
    {"train.beta2", "0.999", "Adam second-moment decay"},
    {"train.eps", "1e-08", "Adam denominator epsilon"},
    {"train.grad_clip_norm", "5", "global gradient norm clip; 0 disables"},
    {"train.batch_size", "32", "training batch size"},
    {"train.max_epochs", "10", "epoch limit"},
    {"train.patience", "3", "early-stopping patience in epochs; 0 disables"},
    {"train.max_steps", "0", "optimizer step limit; 0 means none"},
    {"data.source", "csv", "csv | synthetic"},
    {"data.path", "", "CSV file; relative paths resolve against DPANET_DATA_DIR"},
    {"data.split", "ett_hourly", "ett_hourly | ett_minutely | ratio_702010"},
    {"data.synth.rows", "4000", "synthetic series length"},
    {"data.synth.channels", "2", "synthetic channel count"},
    {"data.synth.periods", "24,96", "comma-separated sine periods"},
    {"data.synth.amplitudes", "1,1", "comma-separated sine amplitudes"},
    {"data.synth.noise", "0", "gaussian noise standard deviation"},
    {"eval.batch_size", "64", "evaluation batch size"},
    {"ablate.horizons", "96", "comma-separated horizons for the ablation table"},
    {"ablate.variants", "full,temporal_only,frequency_only,no_cross_fusion", "variants for the ablation table"},
};
// clang-format on

std::string trim(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

// Typed readers append a problem instead of throwing so that every bad key is
// reported in one pass.
class Reader {
 public:
  Reader(const std::map<std::string, std::string>& values, std::vector<std::string>& problems)
      : values_(values), problems_(problems) {}

  std::uint64_t u64(const std::string& key) {
    const auto& text = values_.at(key);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      problems_.push_back(key + ": expected a nonnegative integer, got '" + text + "'");
    }
    return value;
  }
  std::size_t size(const std::string& key) { return static_cast<std::size_t>(u64(key)); }
  double real(const std::string& key) {
    const auto& text = values_.at(key);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      problems_.push_back(key + ": expected a number, got '" + text + "'");
    }
    return value;
  }
  bool boolean(const std::string& key) {
    const auto& text = values_.at(key);
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    problems_.push_back(key + ": expected true or false, got '" + text + "'");
    return false;
  }
  const std::string& text(const std::string& key) { return values_.at(key); }
  template <typename Parse>
  auto parsed(const std::string& key, Parse parse, decltype(parse(std::string{})) fallback) {
    try {
      return parse(values_.at(key));
    } catch (const ConfigError& e) {
      problems_.push_back(key + ": " + e.what());
      return fallback;
    }
  }
  std::vector<double> reals(const std::string& key) {
    std::vector<double> out;
    for (const auto& item : split_list(values_.at(key))) {
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        problems_.push_back(key + ": '" + item + "' is not a number");
      }
      out.push_back(value);
    }
    return out;
  }
  std::vector<std::size_t> sizes(const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(values_.at(key))) {
      std::size_t value = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
      if (ec != std::errc() || ptr != item.data() + item.size() || value == 0) {
        problems_.push_back(key + ": '" + item + "' is not a positive integer");
      }
      out.push_back(value);
    }
    return out;
  }

 private:
  const std::map<std::string, std::string>& values_;
  std::vector<std::string>& problems_;
};

}  // namespace

Config::Config() {
  for (const auto& spec : kKeys) values_[spec.key] = spec.default_value;
}

bool Config::is_known(const std::string& key) const { return values_.count(key) > 0; }

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key " + key);
  return it->second;
}

void Config::set(const std::string& assignment, const std::string& origin) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    problems_.push_back(origin + ": expected key=value, got '" + assignment + "'");
    return;
  }
  const auto key = trim(assignment.substr(0, eq));
  if (!is_known(key)) {
    problems_.push_back(origin + ": unknown config key '" + key + "'");
    return;
  }
  values_[key] = trim(assignment.substr(eq + 1));
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string origin = path.string() + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems_.push_back(origin + ": malformed section header '" + line + "'");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    set(section.empty() ? line : section + "." + line, origin);
  }
}

RunSettings Config::resolve() const {
  std::vector<std::string> problems = problems_;
  Reader r(values_, problems);
  RunSettings s;
  s.seed = r.u64("seed");

  auto& m = s.model;
  m.input_length = r.size("model.L_in");
  m.pred_length = r.size("model.L_pred");
  m.channels = r.size("model.C");
  m.num_levels = r.size("model.S");
  m.d_model = r.size("model.d_model");
  m.heads = r.size("model.heads");
  m.d_ff = r.size("model.d_ff");
  m.dropout = r.real("model.dropout");
  m.variant = r.parsed("model.variant", parse_variant, Variant::full);
  m.revin_affine = r.boolean("model.revin_affine");
  m.revin_eps = r.real("model.revin_eps");
  m.norm_eps = r.real("model.norm_eps");
  m.band_order = r.parsed("model.band_order", parse_band_order, BandOrder::low_first);
  m.pooling = r.parsed("model.pooling", parse_pooling, Pooling::mean);

  auto& t = s.train;
  t.adam.lr = r.real("train.lr");
  t.adam.beta1 = r.real("train.beta1");
  t.adam.beta2 = r.real("train.beta2");
  t.adam.eps = r.real("train.eps");
  t.adam.grad_clip_norm = r.real("train.grad_clip_norm");
  t.batch_size = r.size("train.batch_size");
  t.max_epochs = r.size("train.max_epochs");
  t.patience = r.size("train.patience");
  t.max_steps = r.size("train.max_steps");
  t.seed = s.seed;

  auto& d = s.data;
  d.source = r.text("data.source");
  if (d.source != "csv" && d.source != "synthetic") {
    problems.push_back("data.source: expected csv or synthetic, got '" + d.source + "'");
  }
  d.path = r.text("data.path");
  d.split = r.parsed("data.split", parse_split_policy, SplitPolicy::ett_hourly);
  d.synth_rows = r.size("data.synth.rows");
  d.synth_channels = r.size("data.synth.channels");
  d.synth_periods = r.reals("data.synth.periods");
  d.synth_amplitudes = r.reals("data.synth.amplitudes");
  d.synth_noise = r.real("data.synth.noise");
  if (d.synth_periods.size() != d.synth_amplitudes.size()) {
    problems.push_back("data.synth.periods and data.synth.amplitudes must have the same length");
  }

  s.eval_batch_size = r.size("eval.batch_size");
  if (s.eval_batch_size == 0) problems.push_back("eval.batch_size must be positive");
  s.ablate_horizons = r.sizes("ablate.horizons");
  if (s.ablate_horizons.empty()) problems.push_back("ablate.horizons must list at least one horizon");
  s.ablate_variants = split_list(r.text("ablate.variants"));
  for (const auto& v : s.ablate_variants) {
    try {
      parse_variant(v);
    } catch (const ConfigError& e) {
      problems.push_back(std::string("ablate.variants: ") + e.what());
    }
  }

  // Cross-field constraints. A zero channel count means "infer from data".
  ModelConfig check = m;
  if (check.channels == 0) check.channels = 1;
  try {
    check.validate();
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) problems.push_back("model: " + p);
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
  if (!problems.empty()) throw ConfigError(problems);
  return s;
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

void Config::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string Config::reference() {
  std::size_t key_width = 0, default_width = 0;
  for (const auto& spec : kKeys) {
    key_width = std::max(key_width, std::string(spec.key).size());
    default_width = std::max(default_width, std::string(spec.default_value).size() + 2);
  }
  std::string out = "Config keys (default in brackets):\n";
  for (const auto& spec : kKeys) {
    std::string key = spec.key;
    key.resize(key_width, ' ');
    std::string value = std::string("[") + spec.default_value + "]";
    value.resize(default_width, ' ');
    out += "  " + key + "  " + value + "  " + spec.description + "\n";
  }
  return out;
}

std::filesystem::path resolve_data_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative()) {
    if (const char* dir = std::getenv("DPANET_DATA_DIR"); dir && *dir) return std::filesystem::path(dir) / p;
  }
  return p;
}

}  // namespace dpanet::cli
