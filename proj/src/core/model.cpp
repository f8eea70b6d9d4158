#include "dpanet/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/numerics/spectrum.hpp"

namespace dpanet {

namespace num = numerics;
using num::Tensor;

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::full: return "full";
    case Variant::temporal_only: return "temporal_only";
    case Variant::frequency_only: return "frequency_only";
    case Variant::no_cross_fusion: return "no_cross_fusion";
  }
  return "full";
}

Variant parse_variant(const std::string& text) {
  for (auto v : {Variant::full, Variant::temporal_only, Variant::frequency_only, Variant::no_cross_fusion}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + text +
                    "' (expected full, temporal_only, frequency_only or no_cross_fusion)");
}

std::string to_string(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "last"; }

Pooling parse_pooling(const std::string& text) {
  if (text == "mean") return Pooling::mean;
  if (text == "last") return Pooling::last;
  throw ConfigError("unknown pooling '" + text + "' (expected mean or last)");
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (input_length < 2) problems.push_back("L_in must be >= 2");
  if (pred_length < 1) problems.push_back("L_pred must be >= 1");
  if (channels < 1) problems.push_back("C must be >= 1");
  if (!(revin_eps > 0.0)) problems.push_back("revin eps must be positive");
  try {
    fusion().validate();
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
  if (num_levels >= 2 && num_levels <= 30 && input_length / 2 + 1 < num_levels) {
    problems.push_back("L_in=" + std::to_string(input_length) + " has too few frequency bins for S=" +
                       std::to_string(num_levels) + " bands");
  }
  if (!problems.empty()) throw ConfigError(problems);
}

namespace {

std::string format_double(double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

}  // namespace

std::string ModelConfig::canonical() const {
  std::map<std::string, std::string> fields{
      {"L_in", std::to_string(input_length)},
      {"L_pred", std::to_string(pred_length)},
      {"C", std::to_string(channels)},
      {"S", std::to_string(num_levels)},
      {"d_model", std::to_string(d_model)},
      {"heads", std::to_string(heads)},
      {"d_ff", std::to_string(d_ff)},
      {"variant", to_string(variant)},
      {"revin_affine", revin_affine ? "true" : "false"},
      {"revin_eps", format_double(revin_eps)},
      {"norm_eps", format_double(norm_eps)},
      {"band_order", to_string(band_order)},
      {"pooling", to_string(pooling)},
  };
  std::string out;
  for (const auto& [key, value] : fields) out += key + "=" + value + "\n";
  return out;
}

ModelConfig ModelConfig::from_canonical(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("config is missing key " + key);
    auto value = it->second;
    fields.erase(it);
    return value;
  };
  auto size = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(take(key))); };
  ModelConfig config;
  try {
    config.input_length = size("L_in");
    config.pred_length = size("L_pred");
    config.channels = size("C");
    config.num_levels = size("S");
    config.d_model = size("d_model");
    config.heads = size("heads");
    config.d_ff = size("d_ff");
    config.variant = parse_variant(take("variant"));
    config.revin_affine = take("revin_affine") == "true";
    config.revin_eps = std::stod(take("revin_eps"));
    config.norm_eps = std::stod(take("norm_eps"));
    config.band_order = parse_band_order(take("band_order"));
    config.pooling = parse_pooling(take("pooling"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(std::string("unparseable config value: ") + e.what());
  }
  if (!fields.empty()) throw ConfigError("unknown config key " + fields.begin()->first);
  return config;
}

std::uint64_t ModelConfig::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

FusionConfig ModelConfig::fusion() const {
  FusionConfig f;
  f.input_length = input_length;
  f.num_levels = num_levels;
  f.d_model = d_model;
  f.heads = heads;
  f.d_ff = d_ff;
  f.dropout = dropout;
  f.cross_attention = variant != Variant::no_cross_fusion;
  f.norm_eps = norm_eps;
  return f;
}

// ---------------------------------------------------------------------------

template <typename T>
DpaNet<T>::DpaNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Initializer<T> init(seed);
  revin_ = Revin<T>(config.channels, static_cast<T>(config.revin_eps), config.revin_affine, params_);
  fusion_ = CoarseToFine<T>(config.fusion(), init, params_);
  head_weight_ = params_.add("head.weight", init.fan_in_uniform({config.d_model, config.pred_length}, config.d_model));
  head_bias_ = params_.add("head.bias", init.fan_in_uniform({config.pred_length}, config.d_model));
}

template <typename T>
std::pair<Tensor<T>, RevinState<T>> DpaNet<T>::normalize(const Tensor<T>& x) const {
  return revin_.normalize(x);
}

template <typename T>
DualPyramid<T> DpaNet<T>::build_streams(const Tensor<T>& x_norm) const {
  const std::size_t levels = config_.num_levels;
  switch (config_.variant) {
    case Variant::temporal_only: {
      auto temporal = build_temporal_pyramid(x_norm, levels);
      return {temporal, temporal};
    }
    case Variant::frequency_only: {
      const auto partition = make_band_partition(num::rfft_bins(config_.input_length), levels);
      auto frequency = build_frequency_pyramid(x_norm, partition, config_.band_order);
      return {frequency, frequency};
    }
    case Variant::full:
    case Variant::no_cross_fusion: break;
  }
  return build_dual_pyramid(x_norm, levels, config_.band_order);
}

template <typename T>
FusionState<T> DpaNet<T>::fuse(const DualPyramid<T>& streams, const ForwardContext& ctx) const {
  return fusion_.forward(streams.temporal, streams.frequency, ctx);
}

template <typename T>
Tensor<T> DpaNet<T>::head(const Tensor<T>& h, std::size_t batch) const {
  const std::size_t folded = h.shape()[0];
  const std::size_t length = h.shape()[1];
  if (folded != batch * config_.channels) {
    throw DimensionError("head input " + num::shape_str(h.shape()) + " does not fold into batch " +
                         std::to_string(batch));
  }
  Tensor<T> pooled = config_.pooling == Pooling::mean
                         ? num::mean_axis(h, 1)
                         : num::reshape(num::slice(h, 1, length - 1, 1), {folded, config_.d_model});
  auto out = num::linear(pooled, head_weight_, head_bias_);  // (B*C, L_pred)
  return num::permute(num::reshape(out, {batch, config_.channels, config_.pred_length}), {0, 2, 1});
}

template <typename T>
Forecast<T> DpaNet<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (x.dim() != 3 || x.shape()[1] != config_.input_length || x.shape()[2] != config_.channels) {
    throw DimensionError("model expects (B, " + std::to_string(config_.input_length) + ", " +
                         std::to_string(config_.channels) + "), got " + num::shape_str(x.shape()));
  }
  for (auto v : x.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError("model input contains non-finite values");
  }
  auto [x_norm, state] = normalize(x);
  auto streams = build_streams(x_norm);
  auto fused = fuse(streams, ctx);
  auto normalized = head(fused.h_t.front(), x.shape()[0]);
  return {revin_.denormalize(normalized, state), normalized};
}

template <typename T>
DpaNet<T> make_variant(ModelConfig config, const std::string& variant, std::uint64_t seed) {
  config.variant = parse_variant(variant);
  return DpaNet<T>(config, seed);
}

template class DpaNet<float>;
template class DpaNet<double>;
template DpaNet<float> make_variant(ModelConfig, const std::string&, std::uint64_t);
template DpaNet<double> make_variant(ModelConfig, const std::string&, std::uint64_t);

}  // namespace dpanet
