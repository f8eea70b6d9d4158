#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpanet/fusion.hpp"
#include "dpanet/numerics/tensor.hpp"
#include "dpanet/parameters.hpp"
#include "dpanet/pyramid.hpp"
#include "dpanet/revin.hpp"

namespace dpanet {

enum class Variant { full, temporal_only, frequency_only, no_cross_fusion };
enum class Pooling { mean, last };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& text);
std::string to_string(Pooling pooling);
Pooling parse_pooling(const std::string& text);

struct ModelConfig {
  std::size_t input_length = 96;
  std::size_t pred_length = 96;
  std::size_t channels = 7;
  std::size_t num_levels = 4;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  Variant variant = Variant::full;
  bool revin_affine = true;
  double revin_eps = 1e-5;
  double norm_eps = 1e-5;
  BandOrder band_order = BandOrder::low_first;
  Pooling pooling = Pooling::mean;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  /// Sorted key=value lines of everything that shapes the trained function.
  /// Dropout is excluded: it has no effect at inference time.
  std::string canonical() const;
  /// Inverse of canonical(); unknown or missing keys are errors.
  static ModelConfig from_canonical(const std::string& text);
  /// 64-bit FNV-1a of canonical().
  std::uint64_t fingerprint() const;
  FusionConfig fusion() const;
};

template <typename T>
struct Forecast {
  numerics::Tensor<T> values;      // (B, L_pred, C), caller's units
  numerics::Tensor<T> normalized;  // head output before inverse RevIN
};

template <typename T>
class DpaNet {
 public:
  explicit DpaNet(const ModelConfig& config, std::uint64_t seed = 0);

  DpaNet(const DpaNet&) = delete;
  DpaNet& operator=(const DpaNet&) = delete;
  DpaNet(DpaNet&&) noexcept = default;
  DpaNet& operator=(DpaNet&&) noexcept = default;

  /// (B, L_in, C) -> (B, L_pred, C).
  Forecast<T> forward(const numerics::Tensor<T>& x, const ForwardContext& ctx = {}) const;

  // Individual stages, exposed for inspection and tests.
  std::pair<numerics::Tensor<T>, RevinState<T>> normalize(const numerics::Tensor<T>& x) const;
  /// The two fusion input streams for this variant.
  DualPyramid<T> build_streams(const numerics::Tensor<T>& x_norm) const;
  FusionState<T> fuse(const DualPyramid<T>& streams, const ForwardContext& ctx) const;
  /// h (B*C, L_in, d) -> normalized forecast (B, L_pred, C).
  numerics::Tensor<T> head(const numerics::Tensor<T>& h, std::size_t batch) const;

  const ModelConfig& config() const { return config_; }
  ParameterList<T>& parameters() { return params_; }
  const ParameterList<T>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

 private:
  ModelConfig config_;
  ParameterList<T> params_;
  Revin<T> revin_;
  CoarseToFine<T> fusion_;
  numerics::Tensor<T> head_weight_;  // (d, L_pred)
  numerics::Tensor<T> head_bias_;    // (L_pred)
};

/// Builds the model with `config.variant` replaced by the named variant.
template <typename T>
DpaNet<T> make_variant(ModelConfig config, const std::string& variant, std::uint64_t seed = 0);

}  // namespace dpanet
