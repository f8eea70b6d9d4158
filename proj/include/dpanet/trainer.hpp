#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dpanet/data.hpp"
#include "dpanet/model.hpp"
#include "dpanet/numerics/tensor.hpp"
#include "dpanet/parameters.hpp"

namespace dpanet {

/// mean((pred - target)^2) over every element.
template <typename T>
numerics::Tensor<T> mse_loss(const numerics::Tensor<T>& pred, const numerics::Tensor<T>& target);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip_norm = 5.0;  // <= 0 disables clipping
};

/// Bias-corrected Adam over a parameter list. Moments are kept per parameter
/// in double precision.
template <typename T>
class Adam {
 public:
  Adam(ParameterList<T>& params, AdamConfig config);

  /// Clips by global norm, then updates every parameter from its gradient.
  /// Throws NumericalError naming the first parameter with a non-finite gradient.
  void step();

  std::size_t steps() const { return steps_; }
  /// Global gradient norm seen by the last step, before clipping.
  double last_grad_norm() const { return last_norm_; }

 private:
  ParameterList<T>* params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
  double last_norm_ = 0.0;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::size_t max_steps = 0;  // 0: no step limit
  std::uint64_t seed = 0;

  void validate() const;
};

/// Tracks the best score and counts epochs without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch's score; returns true when it improved on the best.
  bool update(double score);
  bool should_stop() const { return patience_ > 0 && stale_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;  // cumulative optimizer steps
  double train_loss = 0.0;
  std::optional<double> val_mse;
  std::optional<double> val_mae;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_score = 0.0;  // val MSE, or train loss without a validation split
  std::size_t total_steps = 0;
  bool stopped_early = false;
};

struct EvalReport {
  std::string split;
  std::size_t horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> mse_original;  // in dataset units, when a scaler is supplied
  std::optional<double> mae_original;
  std::size_t windows = 0;
  std::uint64_t fingerprint = 0;
  double wall_clock_seconds = 0.0;
};

/// Trains with early stopping on validation MSE; the parameters of the best
/// epoch are restored before returning. A non-finite loss restores the best
/// parameters seen so far and throws NumericalError.
template <typename T>
TrainResult train(DpaNet<T>& model, const WindowSampler& train_windows, const WindowSampler* val_windows,
                  const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Sequential pass over every window of the sampler, without gradients.
template <typename T>
EvalReport evaluate(const DpaNet<T>& model, const WindowSampler& windows, const std::string& split,
                    std::size_t batch_size = 64, const Scaler* scaler = nullptr);

/// One JSON object per line. Wall-clock time is omitted unless asked for, so
/// that records of repeated runs compare byte for byte.
std::string to_json_line(const EpochRecord& record);
std::string to_json_line(const EvalReport& report, bool include_wall_clock = false);

}  // namespace dpanet
