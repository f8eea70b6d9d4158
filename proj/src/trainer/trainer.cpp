#include <chrono>
#include <cstdio>
#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/trainer.hpp"

namespace dpanet {

namespace num = numerics;
using num::Tensor;

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(adam.lr > 0.0)) problems.push_back("train.lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) problems.push_back("train.beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) problems.push_back("train.beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) problems.push_back("train.eps must be positive");
  if (batch_size == 0) problems.push_back("train.batch_size must be positive");
  if (max_epochs == 0) problems.push_back("train.max_epochs must be positive");
  if (!problems.empty()) throw ConfigError(problems);
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

bool EarlyStopping::update(double score) {
  if (score < best_) {
    best_ = score;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

template <typename T>
TrainResult train(DpaNet<T>& model, const WindowSampler& train_windows, const WindowSampler* val_windows,
                  const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train_windows.window_count() == 0) throw DataError("training split yields no windows");
  auto& params = model.parameters();
  Adam<T> optimizer(params, config.adam);
  std::mt19937_64 dropout_rng(mix(config.seed ^ 0x5eed));
  ForwardContext ctx;
  ctx.training = true;
  ctx.rng = &dropout_rng;

  TrainResult result;
  EarlyStopping stopper(config.patience);
  auto best_params = params.snapshot();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = train_windows.batches(config.batch_size, mix(config.seed + epoch));
    double loss_sum = 0.0;
    std::size_t loss_windows = 0;
    for (const auto& indices : batches) {
      if (config.max_steps && optimizer.steps() >= config.max_steps) break;
      auto batch = train_windows.make_batch<T>(indices);
      params.zero_grad();
      auto loss = mse_loss(model.forward(batch.inputs, ctx).values, batch.targets);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        params.restore(best_params);
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(optimizer.steps() + 1) + "; parameters restored to the last good state");
      }
      loss.backward();
      optimizer.step();
      loss_sum += value * static_cast<double>(indices.size());
      loss_windows += indices.size();
    }
    if (loss_windows == 0) break;  // step budget exhausted before this epoch

    EpochRecord record;
    record.epoch = epoch;
    record.steps = optimizer.steps();
    record.train_loss = loss_sum / static_cast<double>(loss_windows);
    double score = record.train_loss;
    if (val_windows && val_windows->window_count() > 0) {
      const auto report = evaluate(model, *val_windows, "val", std::max<std::size_t>(config.batch_size, 64));
      record.val_mse = report.mse;
      record.val_mae = report.mae;
      score = report.mse;
    }
    if (!std::isfinite(score)) {
      params.restore(best_params);
      throw NumericalError("training diverged: non-finite validation score after epoch " + std::to_string(epoch));
    }
    record.improved = stopper.update(score);
    if (record.improved) {
      result.best_score = score;
      result.best_epoch = epoch;
      best_params = params.snapshot();
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    if (stopper.should_stop()) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
    if (config.max_steps && optimizer.steps() >= config.max_steps) break;
  }
  params.restore(best_params);
  result.total_steps = optimizer.steps();
  return result;
}

template <typename T>
EvalReport evaluate(const DpaNet<T>& model, const WindowSampler& windows, const std::string& split,
                    std::size_t batch_size, const Scaler* scaler) {
  const auto start = std::chrono::steady_clock::now();
  num::NoGradGuard no_grad;
  EvalReport report;
  report.split = split;
  report.horizon = windows.pred_length();
  report.windows = windows.window_count();
  report.fingerprint = model.config().fingerprint();
  double squared = 0.0, absolute = 0.0, squared_orig = 0.0, absolute_orig = 0.0;
  std::size_t elements = 0;
  const std::size_t channels = windows.channels();
  for (const auto& indices : windows.batches(batch_size, std::nullopt)) {
    auto batch = windows.make_batch<T>(indices);
    const auto pred = model.forward(batch.inputs).values;
    const auto p = pred.data();
    const auto t = batch.targets.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double diff = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      squared += diff * diff;
      absolute += std::abs(diff);
      if (scaler) {
        const double orig = diff * scaler->std[i % channels];
        squared_orig += orig * orig;
        absolute_orig += std::abs(orig);
      }
    }
    elements += p.size();
  }
  if (elements > 0) {
    report.mse = squared / static_cast<double>(elements);
    report.mae = absolute / static_cast<double>(elements);
    if (scaler) {
      report.mse_original = squared_orig / static_cast<double>(elements);
      report.mae_original = absolute_orig / static_cast<double>(elements);
    }
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string to_json_line(const EpochRecord& record) {
  nlohmann::ordered_json j;
  j["epoch"] = record.epoch;
  j["steps"] = record.steps;
  j["train_loss"] = record.train_loss;
  j["val_mse"] = record.val_mse ? nlohmann::ordered_json(*record.val_mse) : nlohmann::ordered_json(nullptr);
  j["val_mae"] = record.val_mae ? nlohmann::ordered_json(*record.val_mae) : nlohmann::ordered_json(nullptr);
  j["improved"] = record.improved;
  return j.dump();
}

std::string to_json_line(const EvalReport& report, bool include_wall_clock) {
  nlohmann::ordered_json j;
  j["split"] = report.split;
  j["horizon"] = report.horizon;
  j["mse"] = report.mse;
  j["mae"] = report.mae;
  if (report.mse_original) j["mse_original"] = *report.mse_original;
  if (report.mae_original) j["mae_original"] = *report.mae_original;
  j["windows"] = report.windows;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(report.fingerprint));
  j["fingerprint"] = hex;
  if (include_wall_clock) j["wall_clock_seconds"] = report.wall_clock_seconds;
  return j.dump();
}

template TrainResult train(DpaNet<float>&, const WindowSampler&, const WindowSampler*, const TrainConfig&,
                           const std::function<void(const EpochRecord&)>&);
template TrainResult train(DpaNet<double>&, const WindowSampler&, const WindowSampler*, const TrainConfig&,
                           const std::function<void(const EpochRecord&)>&);
template EvalReport evaluate(const DpaNet<float>&, const WindowSampler&, const std::string&, std::size_t,
                             const Scaler*);
template EvalReport evaluate(const DpaNet<double>&, const WindowSampler&, const std::string&, std::size_t,
                             const Scaler*);

}  // namespace dpanet
