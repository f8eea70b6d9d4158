#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dpanet/numerics/tensor.hpp"
#include "dpanet/parameters.hpp"

namespace dpanet {

/// Softmax weights captured from one cross-attention call, shape
/// (B*C, H, L_query, L_key).
struct AttentionRecord {
  std::size_t scale = 0;
  std::string stream;  // "t" (temporal queries) or "f" (frequency queries)
  numerics::Shape shape;
  std::vector<double> weights;
};

/// Debug hook: when attached to a forward pass, every attention call appends
/// its post-softmax (pre-dropout) weights.
struct AttentionProbe {
  std::vector<AttentionRecord> records;
};

/// Per-call switches for stochastic layers and instrumentation.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
  AttentionProbe* probe = nullptr;
};

struct FusionConfig {
  std::size_t input_length = 96;
  std::size_t num_levels = 4;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  bool cross_attention = true;  // false: h' = LayerNorm(h)
  double norm_eps = 1e-5;

  std::size_t level_length(std::size_t scale) const { return input_length >> scale; }
  /// Throws ConfigError listing every violated constraint.
  void validate() const;
};

/// Scale-specific per-time-step embedding: (B, L_s, C) -> (B*C, L_s, d_model).
template <typename T>
class ScaleEmbedding {
 public:
  ScaleEmbedding() = default;
  ScaleEmbedding(const std::string& prefix, std::size_t length, std::size_t d_model, Initializer<T>& init,
                 ParameterList<T>& params);

  numerics::Tensor<T> forward(const numerics::Tensor<T>& level) const;

 private:
  std::size_t length_ = 0;
  numerics::Tensor<T> weight_;    // (1, d)
  numerics::Tensor<T> bias_;      // (d)
  numerics::Tensor<T> position_;  // (L_s, d)
};

template <typename T>
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(const std::string& prefix, std::size_t d_model, std::size_t heads, double dropout,
                 Initializer<T>& init, ParameterList<T>& params);

  /// query (N, Lq, d), key_value (N, Lk, d) -> (N, Lq, d).
  numerics::Tensor<T> forward(const numerics::Tensor<T>& query, const numerics::Tensor<T>& key_value,
                              const ForwardContext& ctx, std::size_t scale, const char* stream) const;

 private:
  std::size_t d_model_ = 0;
  std::size_t heads_ = 0;
  double dropout_ = 0.0;
  numerics::Tensor<T> wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

template <typename T>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(std::size_t scale, const FusionConfig& config, Initializer<T>& init, ParameterList<T>& params);

  std::pair<numerics::Tensor<T>, numerics::Tensor<T>> forward(const numerics::Tensor<T>& h_t,
                                                              const numerics::Tensor<T>& h_f,
                                                              const ForwardContext& ctx) const;

 private:
  std::size_t scale_ = 0;
  std::size_t d_model_ = 0;
  double dropout_ = 0.0;
  T eps_{};
  bool cross_ = true;
  CrossAttention<T> attn_t_, attn_f_;
  numerics::Tensor<T> norm_t_gain_, norm_t_bias_, norm_f_gain_, norm_f_bias_;
  numerics::Tensor<T> ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
  numerics::Tensor<T> norm_out_gain_, norm_out_bias_;
};

/// Block outputs per scale, index 0 finest. Each entry is (B*C, L_s, d).
template <typename T>
struct FusionState {
  std::vector<numerics::Tensor<T>> h_t;
  std::vector<numerics::Tensor<T>> h_f;
};

/// Embeddings plus fusion blocks for every scale, run coarsest first with
/// upsampled residuals from the scale above.
template <typename T>
class CoarseToFine {
 public:
  CoarseToFine() = default;
  CoarseToFine(const FusionConfig& config, Initializer<T>& init, ParameterList<T>& params);

  /// temporal_stream[s] / frequency_stream[s]: (B, L_in/2^s, C).
  FusionState<T> forward(const std::vector<numerics::Tensor<T>>& temporal_stream,
                         const std::vector<numerics::Tensor<T>>& frequency_stream, const ForwardContext& ctx) const;

  const FusionConfig& config() const { return config_; }

 private:
  FusionConfig config_;
  std::vector<ScaleEmbedding<T>> embed_t_, embed_f_;
  std::vector<FusionBlock<T>> blocks_;
};

}  // namespace dpanet
