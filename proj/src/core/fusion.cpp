#include "dpanet/fusion.hpp"

#include <cmath>

#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"

namespace dpanet {

namespace num = numerics;
using num::Tensor;

void FusionConfig::validate() const {
  std::vector<std::string> problems;
  if (num_levels < 2) problems.push_back("S must be >= 2, got " + std::to_string(num_levels));
  if (num_levels >= 2 && num_levels <= 30 && input_length % (std::size_t{1} << (num_levels - 1)) != 0) {
    problems.push_back("L_in=" + std::to_string(input_length) + " is not divisible by 2^(S-1)=" +
                       std::to_string(std::size_t{1} << (num_levels - 1)));
  }
  if (d_model == 0) problems.push_back("d_model must be positive");
  if (heads == 0) {
    problems.push_back("heads must be positive");
  } else if (d_model % heads != 0) {
    problems.push_back("heads=" + std::to_string(heads) + " does not divide d_model=" + std::to_string(d_model));
  }
  if (d_ff == 0) problems.push_back("d_ff must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must lie in [0, 1)");
  if (!(norm_eps > 0.0)) problems.push_back("layer norm eps must be positive");
  if (!problems.empty()) throw ConfigError(problems);
}

namespace {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (!ctx.rng) throw PreconditionError("training forward with dropout needs an rng");
  return num::dropout(x, rate, *ctx.rng);
}

void require_sequence(const num::Shape& shape, std::size_t d_model, const char* what) {
  if (shape.size() != 3 || shape[2] != d_model) {
    throw DimensionError(std::string(what) + " expects (N, L, " + std::to_string(d_model) + "), got " +
                         num::shape_str(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
ScaleEmbedding<T>::ScaleEmbedding(const std::string& prefix, std::size_t length, std::size_t d_model,
                                  Initializer<T>& init, ParameterList<T>& params)
    : length_(length) {
  weight_ = params.add(prefix + ".weight", init.fan_in_uniform({1, d_model}, 1));
  bias_ = params.add(prefix + ".bias", init.fan_in_uniform({d_model}, 1));
  position_ = params.add(prefix + ".pos", init.normal({length, d_model}, 0.02));
}

template <typename T>
Tensor<T> ScaleEmbedding<T>::forward(const Tensor<T>& level) const {
  if (level.dim() != 3 || level.shape()[1] != length_) {
    throw DimensionError("scale embedding expects (B, " + std::to_string(length_) + ", C), got " +
                         num::shape_str(level.shape()));
  }
  const std::size_t batch = level.shape()[0];
  const std::size_t channels = level.shape()[2];
  auto folded = num::reshape(num::permute(level, {0, 2, 1}), {batch * channels, length_, 1});
  return num::add(num::linear(folded, weight_, bias_), position_);
}

// ---------------------------------------------------------------------------

template <typename T>
CrossAttention<T>::CrossAttention(const std::string& prefix, std::size_t d_model, std::size_t heads, double dropout,
                                  Initializer<T>& init, ParameterList<T>& params)
    : d_model_(d_model), heads_(heads), dropout_(dropout) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("heads=" + std::to_string(heads) + " does not divide d_model=" + std::to_string(d_model));
  }
  auto projection = [&](const std::string& name, Tensor<T>& w, Tensor<T>& b) {
    w = params.add(prefix + "." + name + ".weight", init.fan_in_uniform({d_model, d_model}, d_model));
    b = params.add(prefix + "." + name + ".bias", init.fan_in_uniform({d_model}, d_model));
  };
  projection("query", wq_, bq_);
  projection("key", wk_, bk_);
  projection("value", wv_, bv_);
  projection("out", wo_, bo_);
}

template <typename T>
Tensor<T> CrossAttention<T>::forward(const Tensor<T>& query, const Tensor<T>& key_value, const ForwardContext& ctx,
                                     std::size_t scale, const char* stream) const {
  require_sequence(query.shape(), d_model_, "cross attention query");
  require_sequence(key_value.shape(), d_model_, "cross attention key/value");
  if (query.shape()[0] != key_value.shape()[0]) {
    throw DimensionError("cross attention batch mismatch: " + num::shape_str(query.shape()) + " vs " +
                         num::shape_str(key_value.shape()));
  }
  const std::size_t n = query.shape()[0];
  const std::size_t lq = query.shape()[1];
  const std::size_t lk = key_value.shape()[1];
  const std::size_t dh = d_model_ / heads_;

  auto split_heads = [&](const Tensor<T>& x, std::size_t len) {
    return num::permute(num::reshape(x, {n, len, heads_, dh}), {0, 2, 1, 3});
  };
  auto q = split_heads(num::linear(query, wq_, bq_), lq);
  auto k = split_heads(num::linear(key_value, wk_, bk_), lk);
  auto v = split_heads(num::linear(key_value, wv_, bv_), lk);

  auto scores = num::scale(num::matmul(q, num::transpose(k, 2, 3)), static_cast<T>(1.0 / std::sqrt(double(dh))));
  auto weights = num::softmax(scores, -1);
  if (ctx.probe) {
    const auto values = weights.data();
    ctx.probe->records.push_back({scale, stream, weights.shape(), std::vector<double>(values.begin(), values.end())});
  }
  weights = maybe_dropout(weights, dropout_, ctx);
  auto mixed = num::reshape(num::permute(num::matmul(weights, v), {0, 2, 1, 3}), {n, lq, d_model_});
  return num::linear(mixed, wo_, bo_);
}

// ---------------------------------------------------------------------------

template <typename T>
FusionBlock<T>::FusionBlock(std::size_t scale, const FusionConfig& config, Initializer<T>& init,
                            ParameterList<T>& params)
    : scale_(scale),
      d_model_(config.d_model),
      dropout_(config.dropout),
      eps_(static_cast<T>(config.norm_eps)),
      cross_(config.cross_attention) {
  const std::string prefix = "scale" + std::to_string(scale);
  const std::size_t d = config.d_model;
  if (cross_) {
    attn_t_ = CrossAttention<T>(prefix + ".attn_t", d, config.heads, config.dropout, init, params);
    attn_f_ = CrossAttention<T>(prefix + ".attn_f", d, config.heads, config.dropout, init, params);
  }
  norm_t_gain_ = params.add(prefix + ".norm_t.gain", init.constant({d}, T(1)));
  norm_t_bias_ = params.add(prefix + ".norm_t.bias", init.constant({d}, T(0)));
  norm_f_gain_ = params.add(prefix + ".norm_f.gain", init.constant({d}, T(1)));
  norm_f_bias_ = params.add(prefix + ".norm_f.bias", init.constant({d}, T(0)));
  ffn_w1_ = params.add(prefix + ".ffn.w1", init.fan_in_uniform({2 * d, config.d_ff}, 2 * d));
  ffn_b1_ = params.add(prefix + ".ffn.b1", init.fan_in_uniform({config.d_ff}, 2 * d));
  ffn_w2_ = params.add(prefix + ".ffn.w2", init.fan_in_uniform({config.d_ff, 2 * d}, config.d_ff));
  ffn_b2_ = params.add(prefix + ".ffn.b2", init.fan_in_uniform({2 * d}, config.d_ff));
  norm_out_gain_ = params.add(prefix + ".norm_out.gain", init.constant({2 * d}, T(1)));
  norm_out_bias_ = params.add(prefix + ".norm_out.bias", init.constant({2 * d}, T(0)));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> FusionBlock<T>::forward(const Tensor<T>& h_t, const Tensor<T>& h_f,
                                                        const ForwardContext& ctx) const {
  require_sequence(h_t.shape(), d_model_, "fusion block");
  if (h_t.shape() != h_f.shape()) {
    throw DimensionError("fusion block streams differ: " + num::shape_str(h_t.shape()) + " vs " +
                         num::shape_str(h_f.shape()));
  }
  Tensor<T> pre_t = h_t;
  Tensor<T> pre_f = h_f;
  if (cross_) {
    pre_t = num::add(h_t, attn_t_.forward(h_t, h_f, ctx, scale_, "t"));
    pre_f = num::add(h_f, attn_f_.forward(h_f, h_t, ctx, scale_, "f"));
  }
  auto norm_t = num::layer_norm(pre_t, norm_t_gain_, norm_t_bias_, eps_);
  auto norm_f = num::layer_norm(pre_f, norm_f_gain_, norm_f_bias_, eps_);

  auto joined = num::concat<T>({norm_t, norm_f}, -1);
  auto hidden = maybe_dropout(num::gelu(num::linear(joined, ffn_w1_, ffn_b1_)), dropout_, ctx);
  auto z = num::linear(hidden, ffn_w2_, ffn_b2_);
  auto out = num::layer_norm(num::add(joined, z), norm_out_gain_, norm_out_bias_, eps_);
  return {num::slice(out, -1, 0, d_model_), num::slice(out, -1, d_model_, d_model_)};
}

// ---------------------------------------------------------------------------

template <typename T>
CoarseToFine<T>::CoarseToFine(const FusionConfig& config, Initializer<T>& init, ParameterList<T>& params)
    : config_(config) {
  config.validate();
  for (std::size_t s = 0; s < config.num_levels; ++s) {
    const std::string prefix = "scale" + std::to_string(s);
    embed_t_.emplace_back(prefix + ".embed_t", config.level_length(s), config.d_model, init, params);
    embed_f_.emplace_back(prefix + ".embed_f", config.level_length(s), config.d_model, init, params);
    blocks_.emplace_back(s, config, init, params);
  }
}

template <typename T>
FusionState<T> CoarseToFine<T>::forward(const std::vector<Tensor<T>>& temporal_stream,
                                        const std::vector<Tensor<T>>& frequency_stream,
                                        const ForwardContext& ctx) const {
  const std::size_t levels = config_.num_levels;
  if (temporal_stream.size() != levels || frequency_stream.size() != levels) {
    throw DimensionError("coarse-to-fine expects " + std::to_string(levels) + " levels per stream, got " +
                         std::to_string(temporal_stream.size()) + " and " + std::to_string(frequency_stream.size()));
  }
  FusionState<T> state;
  state.h_t.resize(levels);
  state.h_f.resize(levels);
  for (std::size_t s = levels; s-- > 0;) {
    auto h_t = embed_t_[s].forward(temporal_stream[s]);
    auto h_f = embed_f_[s].forward(frequency_stream[s]);
    if (s + 1 < levels) {
      const std::size_t length = config_.level_length(s);
      h_t = num::add(h_t, num::upsample_linear(state.h_t[s + 1], length));
      h_f = num::add(h_f, num::upsample_linear(state.h_f[s + 1], length));
    }
    std::tie(state.h_t[s], state.h_f[s]) = blocks_[s].forward(h_t, h_f, ctx);
  }
  return state;
}

template class ScaleEmbedding<float>;
template class ScaleEmbedding<double>;
template class CrossAttention<float>;
template class CrossAttention<double>;
template class FusionBlock<float>;
template class FusionBlock<double>;
template class CoarseToFine<float>;
template class CoarseToFine<double>;

}  // namespace dpanet
