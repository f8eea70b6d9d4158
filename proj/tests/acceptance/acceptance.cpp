// Acceptance checks, one per criterion. Usage: acceptance [C1..C9 ...]
// Each check prints one line "Cn PASS|FAIL|SKIP: detail". Exit status is 0
// when every requested check passes, 77 when all of them skipped, 1 otherwise.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "dpanet/checkpoint.hpp"
#include "dpanet/cli/commands.hpp"
#include "dpanet/cli/config.hpp"
#include "dpanet/cli/gradcheck_suite.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/numerics/spectrum.hpp"
#include "dpanet/pyramid.hpp"
#include "dpanet/revin.hpp"
#include "dpanet/trainer.hpp"
#include "test_util.hpp"

namespace {

using namespace dpanet;
using numerics::Tensor;
namespace fs = std::filesystem;

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

std::string sci(double value) {
  std::ostringstream out;
  out << std::scientific << std::setprecision(2) << value;
  return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("dpanet_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_soundness() {
  const auto start = std::chrono::steady_clock::now();
  const auto results = cli::run_gradcheck_suite();
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.worst_error >= worst) {
      worst = r.worst_error;
      worst_name = r.component;
    }
    if (!(r.worst_error < 1e-3)) failed += " " + r.component;
  }

  // Negative control: a corrupted attention backward must be caught.
  cli::GradcheckOptions faulty;
  faulty.inject_fault = "softmax";
  bool caught = false;
  for (const auto& r : cli::run_gradcheck_suite(faulty)) {
    if (r.component == "cross_attention") caught = !(r.worst_error < 1e-3);
  }

  const bool ok = failed.empty() && caught && elapsed < 60.0;
  std::string detail = std::to_string(results.size()) + " components, worst " + sci(worst) + " (" + worst_name +
                       "), " + std::to_string(static_cast<int>(elapsed)) + "s";
  if (!failed.empty()) detail += ", failing:" + failed;
  if (!caught) detail += ", injected attention fault NOT detected";
  return {ok ? Status::pass : Status::fail, detail};
}

Outcome partition_of_unity() {
  double worst = 0.0;
  std::uint64_t seed = 100;
  for (std::size_t length : {8, 96, 192}) {
    for (std::size_t levels : {2, 3, 4}) {
      const auto x = testing::random_tensor<float>({4, length, 3}, ++seed, false, -3.0, 3.0);
      const auto bands = band_reconstructions(x, make_band_partition(length / 2 + 1, levels));
      std::vector<double> total(x.numel(), 0.0);
      for (const auto& band : bands) {
        const auto values = band.data();
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += values[i];
      }
      const auto input = x.data();
      for (std::size_t i = 0; i < total.size(); ++i) {
        worst = std::max(worst, std::abs(total[i] - static_cast<double>(input[i])));
      }
    }
  }
  return {worst < 1e-5 ? Status::pass : Status::fail, "max |sum of bands - x| = " + sci(worst) + " (float32)"};
}

template <typename T>
std::pair<double, double> fft_errors(std::size_t length, std::uint64_t seed) {
  const auto x = testing::random_tensor<T>({length, 1}, seed);
  std::vector<double> signal(x.data().begin(), x.data().end());
  const auto oracle = testing::naive_dft(signal);
  const auto spectrum = numerics::rfft(x);
  const auto bins = spectrum.data();
  double forward = 0.0;
  for (std::size_t k = 0; k < oracle.size(); ++k) {
    forward = std::max(forward, std::abs(static_cast<double>(bins[2 * k]) - oracle[k].real()));
    forward = std::max(forward, std::abs(static_cast<double>(bins[2 * k + 1]) - oracle[k].imag()));
  }
  const auto back = numerics::irfft(spectrum, length);
  double inverse = 0.0;
  for (std::size_t n = 0; n < length; ++n) {
    inverse = std::max(inverse, std::abs(static_cast<double>(back.data()[n]) - signal[n]));
  }
  return {forward, inverse};
}

Outcome fft_oracle() {
  double worst_d = 0.0, worst_f = 0.0;
  std::uint64_t seed = 200;
  for (std::size_t length : {2, 4, 8, 96, 720}) {
    const auto [fd, id] = fft_errors<double>(length, ++seed);
    const auto [ff, iff] = fft_errors<float>(length, seed);
    worst_d = std::max({worst_d, fd, id});
    worst_f = std::max({worst_f, ff, iff});
  }
  const bool ok = worst_d < 1e-5 && worst_f < 1e-5;
  return {ok ? Status::pass : Status::fail,
          "max error vs naive DFT and inverse pair: " + sci(worst_d) + " (float64), " + sci(worst_f) + " (float32)"};
}

// Affine gains are kept away from zero: the inverse divides by them, so a
// near-zero gain is ill-conditioned rather than a round-trip defect.
template <typename T>
double revin_error(std::uint64_t seed) {
  double worst = 0.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> offset(-10.0, 10.0), spread(0.01, 5.0), gain(0.5, 1.5), bias(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t channels = 1 + trial % 7;
    ParameterList<T> params;
    Revin<T> revin(channels, T(1e-5), true, params);
    for (auto& g : params.entries()[0].value.mutable_data()) g = static_cast<T>(rng() % 2 ? gain(rng) : -gain(rng));
    for (auto& b : params.entries()[1].value.mutable_data()) b = static_cast<T>(bias(rng));
    auto x = testing::random_tensor<T>({4, 96, channels}, seed + trial);
    auto values = x.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      const double shift = offset(rng), scale = spread(rng);
      for (std::size_t i = c; i < values.size(); i += channels) {
        values[i] = static_cast<T>(values[i] * scale + shift);
      }
    }
    auto [normalized, state] = revin.normalize(x);
    const auto restored = revin.denormalize(normalized, state);
    for (std::size_t i = 0; i < values.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(restored.data()[i]) - static_cast<double>(values[i])));
    }
  }
  return worst;
}

Outcome revin_round_trip() {
  const double single = revin_error<float>(300), full = revin_error<double>(300);
  return {single < 1e-5 && full < 1e-5 ? Status::pass : Status::fail,
          "max |x - denorm(norm(x))| = " + sci(single) + " (float32), " + sci(full) + " (float64)"};
}

ModelConfig small_forecaster() {
  ModelConfig c;
  c.input_length = 96;
  c.pred_length = 24;
  c.channels = 2;
  c.num_levels = 3;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.dropout = 0.0;
  return c;
}

struct Series {
  RawDataset raw;
  SplitRanges ranges;
  Scaler scaler;
  std::vector<double> values;
};

Series make_series(std::size_t rows, const std::vector<double>& periods, double noise, std::uint64_t seed,
                   const ModelConfig& model) {
  Series s;
  s.raw = synth_multiperiodic(rows, model.channels, periods, std::vector<double>(periods.size(), 1.0), noise, seed);
  s.ranges = chronological_split(rows, SplitPolicy::ratio_702010, model.input_length, model.pred_length);
  s.scaler = Scaler::fit(s.raw, s.ranges.train.begin, s.ranges.train.end);
  s.values = s.scaler.transform(s.raw);
  return s;
}

Outcome overfit() {
  const auto start = std::chrono::steady_clock::now();
  const auto config = small_forecaster();
  const auto series = make_series(2000, {24, 96}, 0.0, 1, config);
  const WindowSampler windows(&series.values, config.channels, series.ranges.train, config.input_length,
                              config.pred_length);
  std::string detail;
  int passed = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    DpaNet<float> model(config, seed);
    TrainConfig tc;
    tc.adam.lr = 3e-3;
    tc.batch_size = 32;
    tc.max_epochs = 1000;
    tc.patience = 0;
    tc.max_steps = 500;
    tc.seed = seed;
    const auto result = train(model, windows, nullptr, tc);
    const auto report = evaluate(model, windows, "train");
    passed += report.mse < 0.01 ? 1 : 0;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " train MSE " +
              sci(report.mse) + " @" + std::to_string(result.total_steps) + " steps";
  }
  const double elapsed = seconds_since(start);
  detail = std::to_string(passed) + "/3 seeds below 0.01 (" + detail + "), " +
           std::to_string(static_cast<int>(elapsed)) + "s";
  return {passed == 3 && elapsed < 300.0 ? Status::pass : Status::fail, detail};
}

Outcome ablation_direction() {
  const auto base = small_forecaster();
  std::map<std::string, std::vector<double>> scores;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto series = make_series(3000, {24, 96, 336}, 0.1, seed, base);
    const auto& r = series.ranges;
    const WindowSampler train_w(&series.values, 2, r.train, base.input_length, base.pred_length);
    const WindowSampler val_w(&series.values, 2, r.val, base.input_length, base.pred_length);
    const WindowSampler test_w(&series.values, 2, r.test, base.input_length, base.pred_length);
    for (const char* variant : {"full", "no_cross_fusion"}) {
      auto model = make_variant<float>(base, variant, seed);
      TrainConfig tc;
      tc.adam.lr = 3e-3;
      tc.batch_size = 32;
      tc.max_epochs = 100;
      tc.patience = 0;
      tc.max_steps = 400;
      tc.seed = seed;
      train(model, train_w, &val_w, tc);
      scores[variant].push_back(evaluate(model, test_w, "test").mse);
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double full = median(scores["full"]), plain = median(scores["no_cross_fusion"]);
  return {full <= plain ? Status::pass : Status::fail,
          "median test MSE full " + sci(full) + " vs no_cross_fusion " + sci(plain)};
}

Outcome benchmark_sanity() {
  const char* dir = std::getenv("DPANET_DATA_DIR");
  const fs::path path = cli::resolve_data_path("ETTh1.csv");
  if (!dir || !fs::exists(path)) {
    return {Status::skip, "ETTh1.csv not found (set DPANET_DATA_DIR to the directory holding it)"};
  }
  const auto raw = load_csv(path);
  ModelConfig config;
  config.channels = raw.channels();
  const auto ranges = chronological_split(raw.rows(), SplitPolicy::ett_hourly, config.input_length,
                                          config.pred_length);
  const auto scaler = Scaler::fit(raw, ranges.train.begin, ranges.train.end);
  const auto values = scaler.transform(raw);
  const WindowSampler train_w(&values, config.channels, ranges.train, config.input_length, config.pred_length);
  const WindowSampler val_w(&values, config.channels, ranges.val, config.input_length, config.pred_length);
  const WindowSampler test_w(&values, config.channels, ranges.test, config.input_length, config.pred_length);
  DpaNet<float> model(config, 0);
  TrainConfig tc;
  tc.max_epochs = 10;
  const auto start = std::chrono::steady_clock::now();
  const auto result = train(model, train_w, &val_w, tc);
  const auto report = evaluate(model, test_w, "test");
  return {report.mse <= 0.5 ? Status::pass : Status::fail,
          "test MSE " + std::to_string(report.mse) + " after " + std::to_string(result.history.size()) +
              " epochs, " + std::to_string(static_cast<int>(seconds_since(start))) + "s"};
}

std::vector<std::string> small_run_args(const std::string& command, const fs::path& out) {
  return {command,
          "--set", "data.source=synthetic",
          "--set", "data.synth.rows=1200",
          "--set", "data.synth.noise=0.1",
          "--set", "data.split=ratio_702010",
          "--set", "seed=7",
          "--set", "model.L_in=48",
          "--set", "model.L_pred=12",
          "--set", "model.S=3",
          "--set", "model.d_model=16",
          "--set", "model.heads=2",
          "--set", "model.d_ff=32",
          "--set", "train.lr=0.001",
          "--set", "train.max_epochs=2",
          "--out", out.string()};
}

Outcome determinism() {
  ScratchDir scratch("determinism");
  const auto a = scratch.path() / "a", b = scratch.path() / "b";
  std::ostringstream sink;
  auto* saved = std::cout.rdbuf(sink.rdbuf());
  const int rc_a = cli::run(small_run_args("train", a));
  const int rc_b = cli::run(small_run_args("train", b));
  std::cout.rdbuf(saved);
  if (rc_a != 0 || rc_b != 0) return {Status::fail, "train exited with " + std::to_string(rc_a) + "/" + std::to_string(rc_b)};
  std::string differing;
  for (const char* file : {"history.jsonl", "metrics.jsonl", "checkpoint.bin", "config.cfg"}) {
    const auto left = read_file(a / file);
    if (left.empty() || left != read_file(b / file)) differing += std::string(" ") + file;
  }
  if (!differing.empty()) return {Status::fail, "outputs differ:" + differing};
  return {Status::pass, "history, metrics, checkpoint and resolved config byte-identical across two runs"};
}

Outcome checkpoint_round_trip() {
  ScratchDir scratch("checkpoint");
  ModelConfig config = small_forecaster();
  config.input_length = 48;
  config.pred_length = 12;
  config.dropout = 0.1;
  const auto series = make_series(1200, {24, 96}, 0.1, 5, config);
  const WindowSampler train_w(&series.values, 2, series.ranges.train, 48, 12);
  const WindowSampler test_w(&series.values, 2, series.ranges.test, 48, 12);
  DpaNet<float> model(config, 5);
  TrainConfig tc;
  tc.adam.lr = 1e-3;
  tc.max_steps = 60;
  tc.seed = 5;
  train(model, train_w, nullptr, tc);
  const auto in_memory = evaluate(model, test_w, "test", 64, &series.scaler);

  const auto path = scratch.path() / "model.ckpt";
  save_checkpoint(path, model);
  DpaNet<float> restored(read_checkpoint_config(path), 99);
  load_checkpoint(path, restored);
  const auto reloaded = evaluate(restored, test_w, "test", 64, &series.scaler);
  const bool library_equal = to_json_line(in_memory) == to_json_line(reloaded) &&
                             std::memcmp(&in_memory.mse, &reloaded.mse, sizeof(double)) == 0 &&
                             std::memcmp(&in_memory.mae, &reloaded.mae, sizeof(double)) == 0;

  // Same through the command line: eval of the written checkpoint must
  // reproduce the test record written by train.
  std::ostringstream sink;
  auto* saved = std::cout.rdbuf(sink.rdbuf());
  const auto run_dir = scratch.path() / "run", eval_dir = scratch.path() / "eval";
  int rc = cli::run(small_run_args("train", run_dir));
  if (rc == 0) {
    rc = cli::run({"eval", "--config", (run_dir / "config.cfg").string(), "--checkpoint",
                   (run_dir / "checkpoint.bin").string(), "--out", eval_dir.string()});
  }
  std::cout.rdbuf(saved);
  bool cli_equal = false;
  if (rc == 0) {
    std::ifstream metrics(run_dir / "metrics.jsonl");
    std::string val_line, test_line;
    std::getline(metrics, val_line);
    std::getline(metrics, test_line);
    cli_equal = test_line + "\n" == read_file(eval_dir / "eval.jsonl");
  }
  const bool ok = library_equal && cli_equal;
  return {ok ? Status::pass : Status::fail,
          std::string("library reload ") + (library_equal ? "bit-identical" : "DIFFERS") + " (test MSE " +
              sci(in_memory.mse) + "), cli eval " + (cli_equal ? "bit-identical" : "DIFFERS")};
}

const std::map<std::string, std::pair<std::string, std::function<Outcome()>>>& checks() {
  static const std::map<std::string, std::pair<std::string, std::function<Outcome()>>> table{
      {"C1", {"gradient soundness", gradient_soundness}},
      {"C2", {"spectral partition of unity", partition_of_unity}},
      {"C3", {"FFT oracle and inverse pair", fft_oracle}},
      {"C4", {"RevIN round trip", revin_round_trip}},
      {"C5", {"overfit two-sine series", overfit}},
      {"C6", {"ablation direction", ablation_direction}},
      {"C7", {"ETTh1 benchmark sanity", benchmark_sanity}},
      {"C8", {"determinism", determinism}},
      {"C9", {"checkpoint round trip", checkpoint_round_trip}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> requested(argv + 1, argv + argc);
  if (requested.empty()) {
    for (const auto& [id, check] : checks()) requested.push_back(id);
  }
  int passed = 0, failed = 0, skipped = 0;
  for (const auto& id : requested) {
    const auto it = checks().find(id);
    if (it == checks().end()) {
      std::cerr << "unknown criterion " << id << '\n';
      return 2;
    }
    Outcome outcome;
    try {
      outcome = it->second.second();
    } catch (const std::exception& e) {
      outcome = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* label = outcome.status == Status::pass ? "PASS" : outcome.status == Status::fail ? "FAIL" : "SKIP";
    std::cout << id << ' ' << label << " [" << it->second.first << "] " << outcome.detail << std::endl;
    (outcome.status == Status::pass ? passed : outcome.status == Status::fail ? failed : skipped) += 1;
  }
  if (failed > 0) return 1;
  return passed == 0 && skipped > 0 ? 77 : 0;
}
