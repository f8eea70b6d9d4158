#include <gtest/gtest.h>

#include <cmath>

#include "dpanet/data.hpp"
#include "dpanet/error.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/trainer.hpp"
#include "test_util.hpp"

namespace num = dpanet::numerics;
using dpanet::Adam;
using dpanet::AdamConfig;
using dpanet::DpaNet;
using dpanet::ModelConfig;
using dpanet::ParameterList;
using dpanet::TrainConfig;
using dpanet::testing::finite_difference_error;
using dpanet::testing::random_tensor;
using num::Tensor;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_length = 16;
  c.pred_length = 8;
  c.channels = 2;
  c.num_levels = 2;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.dropout = 0.1;
  return c;
}

struct SyntheticSplits {
  dpanet::RawDataset raw;
  std::vector<double> standardized;
  dpanet::SplitRanges ranges;
  dpanet::Scaler scaler;
};

SyntheticSplits make_splits(std::size_t rows = 400) {
  SyntheticSplits s;
  s.raw = dpanet::synth_multiperiodic(rows, 2, {12, 40}, {1.0, 0.6}, 0.05, 3);
  s.ranges = dpanet::chronological_split(rows, dpanet::SplitPolicy::ratio_702010, 16, 8);
  s.scaler = dpanet::Scaler::fit(s.raw, s.ranges.train.begin, s.ranges.train.end);
  s.standardized = s.scaler.transform(s.raw);
  return s;
}

// Scalar Adam recurrence with optional clipping, used as an oracle.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, clip = 0.0;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double w, double g) {
    if (clip > 0.0 && std::abs(g) > clip) g *= clip / std::abs(g);
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return w - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST(MseLoss, ValuesAndGradient) {
  auto a = random_tensor<double>({2, 3, 2}, 1);
  EXPECT_EQ(dpanet::mse_loss(a, a).item(), 0.0);
  auto ones = num::add_scalar(a, 1.0);
  EXPECT_NEAR(dpanet::mse_loss(ones, a).item(), 1.0, 1e-12);

  auto pred = random_tensor<double>({2, 3, 2}, 2, true);
  auto target = random_tensor<double>({2, 3, 2}, 3);
  dpanet::mse_loss(pred, target).backward();
  const auto g = pred.grad();
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(g[i], 2.0 * (pred.data()[i] - target.data()[i]) / 12.0, 1e-12);
  }
  pred.zero_grad();
  EXPECT_LT(finite_difference_error([&] { return dpanet::mse_loss(pred, target); }, {pred}), 1e-6);
  EXPECT_THROW(dpanet::mse_loss(pred, random_tensor<double>({2, 3}, 1)), dpanet::DimensionError);
}

TEST(AdamOptimizer, ZeroGradientLeavesParametersUnchanged) {
  ParameterList<double> params;
  auto w = params.add("w", random_tensor<double>({4}, 1));
  const auto before = w.to_vector();
  Adam<double> adam(params, {});
  for (auto& g : w.mutable_grad()) g = 0.0;
  adam.step();
  EXPECT_EQ(w.to_vector(), before);
}

TEST(AdamOptimizer, FirstStepMovesByLearningRate) {
  ParameterList<double> params;
  auto w = params.add("w", Tensor<double>::scalar(2.0));
  AdamConfig config;
  config.lr = 0.01;
  Adam<double> adam(params, config);
  w.mutable_grad()[0] = 1.0;
  adam.step();
  EXPECT_NEAR(w.item(), 2.0 - 0.01, 1e-9);
}

TEST(AdamOptimizer, QuadraticConvergesLikeScalarRecurrence) {
  ParameterList<double> params;
  auto w = params.add("w", Tensor<double>::scalar(0.0));
  AdamConfig config;
  config.lr = 0.1;
  config.grad_clip_norm = 0.0;
  Adam<double> adam(params, config);
  ScalarAdam oracle{0.1};
  double w_oracle = 0.0;
  for (int i = 0; i < 50; ++i) {
    params.zero_grad();
    num::square(num::add_scalar(w, -3.0)).backward();
    adam.step();
    w_oracle = oracle.step(w_oracle, 2.0 * (w_oracle - 3.0));
    ASSERT_NEAR(w.item(), w_oracle, 1e-12);
  }
  EXPECT_LT(std::abs(w.item() - 3.0), 0.5);
}

TEST(AdamOptimizer, ClipsByGlobalNorm) {
  ParameterList<double> params;
  auto w = params.add("w", Tensor<double>::scalar(0.0));
  AdamConfig config;
  config.lr = 0.1;
  config.grad_clip_norm = 5.0;
  Adam<double> adam(params, config);
  ScalarAdam oracle{0.1};
  oracle.clip = 5.0;
  double w_oracle = 0.0;
  for (double g : {10.0, 1.0, -7.0}) {
    w.mutable_grad()[0] = g;
    adam.step();
    w_oracle = oracle.step(w_oracle, g);
    EXPECT_NEAR(w.item(), w_oracle, 1e-12);
  }
  EXPECT_DOUBLE_EQ(adam.last_grad_norm(), 7.0);
}

TEST(AdamOptimizer, NonFiniteGradientNamesTheParameter) {
  ParameterList<float> params;
  params.add("ok", Tensor<float>::scalar(1.0f));
  auto bad = params.add("scale3.ffn.w1", Tensor<float>::zeros({2}));
  bad.mutable_grad()[1] = std::nanf("");
  Adam<float> adam(params, {});
  try {
    adam.step();
    FAIL() << "expected NumericalError";
  } catch (const dpanet::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("scale3.ffn.w1"), std::string::npos);
  }
}

TEST(AdamOptimizer, UpdateIndependentOfParameterOrder) {
  auto run = [](bool reversed) {
    ParameterList<double> params;
    auto a = Tensor<double>::from_data({2}, {1.0, -2.0});
    auto b = Tensor<double>::from_data({3}, {0.5, 0.0, 4.0});
    if (reversed) {
      params.add("b", b);
      params.add("a", a);
    } else {
      params.add("a", a);
      params.add("b", b);
    }
    Adam<double> adam(params, {});
    for (int i = 0; i < 3; ++i) {
      params.zero_grad();
      num::add(num::sum(num::square(a)), num::sum(num::mul(b, b))).backward();
      adam.step();
    }
    auto out = a.to_vector();
    auto bv = b.to_vector();
    out.insert(out.end(), bv.begin(), bv.end());
    return out;
  };
  EXPECT_EQ(run(false), run(true));
}

TEST(EarlyStopping, WorseningScoresStopAfterPatience) {
  dpanet::EarlyStopping stopper(1);
  EXPECT_TRUE(stopper.update(1.0));
  EXPECT_FALSE(stopper.should_stop());
  EXPECT_FALSE(stopper.update(1.5));
  EXPECT_TRUE(stopper.should_stop());  // two epochs run

  dpanet::EarlyStopping patient(3);
  for (double s : {1.0, 1.1, 0.9, 1.0, 1.2}) patient.update(s);
  EXPECT_FALSE(patient.should_stop());
  patient.update(1.3);
  EXPECT_TRUE(patient.should_stop());
  EXPECT_EQ(patient.best(), 0.9);
}

TEST(Training, LossDecreasesOnAFixedBatch) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto config = tiny_model();
    config.dropout = 0.0;
    DpaNet<float> model(config, seed);
    auto splits = make_splits();
    dpanet::WindowSampler sampler(&splits.standardized, 2, splits.ranges.train, 16, 8);
    auto batch = sampler.make_batch<float>(sampler.batches(16, seed).front());
    AdamConfig adam_config;
    adam_config.lr = 1e-3;
    Adam<float> adam(model.parameters(), adam_config);
    double previous = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 5; ++step) {
      model.parameters().zero_grad();
      auto loss = dpanet::mse_loss(model.forward(batch.inputs).values, batch.targets);
      EXPECT_LT(loss.item(), previous) << "seed " << seed << " step " << step;
      previous = loss.item();
      loss.backward();
      adam.step();
    }
  }
}

TEST(Training, IsDeterministicAndRestoresBestEpoch) {
  auto splits = make_splits();
  dpanet::WindowSampler train_windows(&splits.standardized, 2, splits.ranges.train, 16, 8);
  dpanet::WindowSampler val_windows(&splits.standardized, 2, splits.ranges.val, 16, 8);
  TrainConfig config;
  config.adam.lr = 3e-3;
  config.max_epochs = 3;
  config.patience = 3;
  config.batch_size = 16;
  config.seed = 42;
  auto run = [&](std::vector<std::string>& lines) {
    DpaNet<float> model(tiny_model(), 7);
    auto result = dpanet::train(model, train_windows, &val_windows, config,
                                [&](const dpanet::EpochRecord& r) { lines.push_back(dpanet::to_json_line(r)); });
    auto report = dpanet::evaluate(model, val_windows, "val");
    lines.push_back(dpanet::to_json_line(report));
    // Restored parameters reproduce the best epoch's validation score exactly.
    EXPECT_EQ(report.mse, *result.history[result.best_epoch - 1].val_mse);
    return result;
  };
  std::vector<std::string> first, second;
  auto r1 = run(first);
  run(second);
  EXPECT_EQ(first, second);
  EXPECT_EQ(r1.history.size(), 3u);
  EXPECT_LT(r1.history.back().train_loss, r1.history.front().train_loss);
}

TEST(Training, StepBudgetIsHonoured) {
  auto splits = make_splits();
  dpanet::WindowSampler train_windows(&splits.standardized, 2, splits.ranges.train, 16, 8);
  TrainConfig config;
  config.max_epochs = 10;
  config.patience = 0;
  config.max_steps = 12;
  config.batch_size = 16;
  DpaNet<float> model(tiny_model(), 1);
  auto result = dpanet::train(model, train_windows, nullptr, config);
  EXPECT_EQ(result.total_steps, 12u);
  EXPECT_EQ(result.history.back().steps, 12u);
}

TEST(Training, NonFiniteLossAborts) {
  auto splits = make_splits();
  dpanet::WindowSampler train_windows(&splits.standardized, 2, splits.ranges.train, 16, 8);
  DpaNet<float> model(tiny_model(), 1);
  model.parameters().find("head.bias")->mutable_data()[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(dpanet::train(model, train_windows, nullptr, TrainConfig{}), dpanet::NumericalError);
}

TEST(Training, ConfigValidationListsProblems) {
  TrainConfig config;
  config.adam.lr = 0.0;
  config.batch_size = 0;
  config.max_epochs = 0;
  try {
    config.validate();
    FAIL();
  } catch (const dpanet::ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 3u);
  }
}

TEST(Evaluation, MatchesPerWindowOracleWithoutTouchingParameters) {
  auto splits = make_splits();
  dpanet::WindowSampler test_windows(&splits.standardized, 2, splits.ranges.test, 16, 8);
  DpaNet<double> model(tiny_model(), 5);
  const auto before = model.parameters().snapshot();
  auto report = dpanet::evaluate(model, test_windows, "test", 7, &splits.scaler);
  EXPECT_EQ(model.parameters().snapshot(), before);
  double se = 0.0, ae = 0.0, se_orig = 0.0;
  std::size_t n = 0;
  for (std::size_t w = 0; w < test_windows.window_count(); ++w) {
    auto batch = test_windows.make_batch<double>({w});
    auto pred = model.forward(batch.inputs).values;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double d = pred.data()[i] - batch.targets.data()[i];
      se += d * d;
      ae += std::abs(d);
      se_orig += std::pow(d * splits.scaler.std[i % 2], 2);
      ++n;
    }
  }
  EXPECT_EQ(report.windows, test_windows.window_count());
  EXPECT_NEAR(report.mse, se / n, 1e-12);
  EXPECT_NEAR(report.mae, ae / n, 1e-12);
  EXPECT_NEAR(*report.mse_original, se_orig / n, 1e-12);
  EXPECT_EQ(dpanet::to_json_line(report), dpanet::to_json_line(dpanet::evaluate(model, test_windows, "test", 7,
                                                                                 &splits.scaler)));
}
