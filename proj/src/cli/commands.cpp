#include "dpanet/cli/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "dpanet/checkpoint.hpp"
#include "dpanet/cli/config.hpp"
#include "dpanet/cli/gradcheck_suite.hpp"
#include "dpanet/data.hpp"
#include "dpanet/error.hpp"
#include "dpanet/model.hpp"
#include "dpanet/numerics/tensor.hpp"
#include "dpanet/trainer.hpp"

namespace dpanet::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kScalerMean = "data.scaler.mean";
constexpr const char* kScalerStd = "data.scaler.std";

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

Config load_config(const CommonOptions& options) {
  Config config;
  if (!options.config_path.empty()) config.load_file(options.config_path);
  for (const auto& assignment : options.overrides) config.set(assignment);
  return config;
}

void set_model_keys(Config& config, const ModelConfig& m) {
  auto set = [&](const std::string& key, const std::string& value) { config.set(key + "=" + value); };
  std::ostringstream eps;
  eps.precision(17);
  set("model.L_in", std::to_string(m.input_length));
  set("model.L_pred", std::to_string(m.pred_length));
  set("model.C", std::to_string(m.channels));
  set("model.S", std::to_string(m.num_levels));
  set("model.d_model", std::to_string(m.d_model));
  set("model.heads", std::to_string(m.heads));
  set("model.d_ff", std::to_string(m.d_ff));
  set("model.variant", to_string(m.variant));
  set("model.revin_affine", m.revin_affine ? "true" : "false");
  set("model.band_order", to_string(m.band_order));
  set("model.pooling", to_string(m.pooling));
  auto real = [](double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
  };
  set("model.revin_eps", real(m.revin_eps));
  set("model.norm_eps", real(m.norm_eps));
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path path(dir);
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create output directory " + path.string() + ": " + ec.message());
  return path;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

RawDataset load_dataset(const DataSettings& data, std::uint64_t seed) {
  if (data.source == "synthetic") {
    auto raw = synth_multiperiodic(data.synth_rows, data.synth_channels, data.synth_periods, data.synth_amplitudes,
                                   data.synth_noise, seed);
    return raw;
  }
  if (data.path.empty()) throw ConfigError("data.path is required when data.source is csv");
  const auto path = resolve_data_path(data.path);
  if (!fs::exists(path)) throw IoError("dataset not found: " + path.string());
  return load_csv(path);
}

/// Standardized dataset with one sampler per split. Samplers point into
/// `values`, so the struct is held by pointer.
struct PreparedData {
  RawDataset raw;
  SplitRanges ranges;
  Scaler scaler;
  std::vector<double> values;
  std::optional<WindowSampler> train, val, test;

  PreparedData() = default;
  PreparedData(const PreparedData&) = delete;
  PreparedData& operator=(const PreparedData&) = delete;

  const WindowSampler& split(const std::string& name) const {
    if (name == "train") return *train;
    if (name == "val") return *val;
    if (name == "test") return *test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
  }
};

std::unique_ptr<PreparedData> prepare_data(RawDataset raw, SplitPolicy policy, const ModelConfig& model,
                                           const Scaler* fixed_scaler) {
  auto data = std::make_unique<PreparedData>();
  data->raw = std::move(raw);
  if (data->raw.channels() != model.channels) {
    throw ConfigError("dataset has " + std::to_string(data->raw.channels()) + " channels but the model expects " +
                      std::to_string(model.channels));
  }
  data->ranges = chronological_split(data->raw.rows(), policy, model.input_length, model.pred_length);
  const auto& tr = data->ranges.train;
  data->scaler = fixed_scaler ? *fixed_scaler : Scaler::fit(data->raw, tr.begin + tr.lookback, tr.end);
  data->values = data->scaler.transform(data->raw);
  const auto C = model.channels;
  data->train.emplace(&data->values, C, data->ranges.train, model.input_length, model.pred_length);
  data->val.emplace(&data->values, C, data->ranges.val, model.input_length, model.pred_length);
  data->test.emplace(&data->values, C, data->ranges.test, model.input_length, model.pred_length);
  return data;
}

std::vector<ExtraArray> scaler_extras(const Scaler& scaler) {
  return {{kScalerMean, {scaler.mean.size()}, scaler.mean}, {kScalerStd, {scaler.std.size()}, scaler.std}};
}

Scaler scaler_from_extras(const std::vector<ExtraArray>& extras, std::size_t channels) {
  Scaler scaler;
  for (const auto& extra : extras) {
    if (extra.name == kScalerMean) scaler.mean = extra.values;
    if (extra.name == kScalerStd) scaler.std = extra.values;
  }
  if (scaler.mean.size() != channels || scaler.std.size() != channels) {
    throw IncompatibleCheckpointError("checkpoint lacks a dataset scaler for " + std::to_string(channels) +
                                      " channels");
  }
  return scaler;
}

/// Resolves settings and fills the channel count from the dataset.
struct Resolved {
  Config config;
  RunSettings settings;
  RawDataset raw;
};

Resolved resolve_with_data(const CommonOptions& options) {
  Resolved r{load_config(options), {}, {}};
  r.settings = r.config.resolve();
  r.raw = load_dataset(r.settings.data, r.settings.seed);
  auto& C = r.settings.model.channels;
  if (C == 0) {
    C = r.raw.channels();
    r.config.set("model.C=" + std::to_string(C));
  }
  return r;
}

struct TrainedRun {
  DpaNet<float> model;
  TrainResult result;
  EvalReport val;
  EvalReport test;
};

TrainedRun train_and_evaluate(const RunSettings& settings, const ModelConfig& model_config, const PreparedData& data,
                              const std::function<void(const EpochRecord&)>& on_epoch) {
  DpaNet<float> model(model_config, settings.seed);
  auto result = train(model, *data.train, &*data.val, settings.train, on_epoch);
  auto val = evaluate(model, *data.val, "val", settings.eval_batch_size, &data.scaler);
  auto test = evaluate(model, *data.test, "test", settings.eval_batch_size, &data.scaler);
  return {std::move(model), std::move(result), std::move(val), std::move(test)};
}

// ---------------------------------------------------------------------------

int cmd_train(const CommonOptions& options) {
  auto resolved = resolve_with_data(options);
  const auto& s = resolved.settings;
  s.model.validate();
  const auto out = prepare_out_dir(options.out_dir);
  resolved.config.write(out / "config.cfg");

  auto data = prepare_data(std::move(resolved.raw), s.data.split, s.model, nullptr);
  auto history = open_output(out / "history.jsonl");
  auto on_epoch = [&](const EpochRecord& record) {
    const auto line = to_json_line(record);
    history << line << '\n' << std::flush;
    std::cout << line << '\n' << std::flush;
  };
  auto run = train_and_evaluate(s, s.model, *data, on_epoch);
  save_checkpoint(out / "checkpoint.bin", run.model, scaler_extras(data->scaler));

  auto metrics = open_output(out / "metrics.jsonl");
  for (const auto* report : {&run.val, &run.test}) {
    metrics << to_json_line(*report) << '\n';
    std::cout << to_json_line(*report) << '\n';
  }
  if (!metrics) throw IoError("failed writing metrics");
  return kSuccess;
}

int cmd_eval(const CommonOptions& options, const std::string& checkpoint, const std::string& split) {
  Config config = load_config(options);
  const auto model_config = read_checkpoint_config(checkpoint);
  set_model_keys(config, model_config);
  const auto settings = config.resolve();

  DpaNet<float> model(model_config, settings.seed);
  const auto extras = load_checkpoint(checkpoint, model);
  const auto scaler = scaler_from_extras(extras, model_config.channels);

  const auto out = prepare_out_dir(options.out_dir);
  config.write(out / "config.cfg");
  auto data = prepare_data(load_dataset(settings.data, settings.seed), settings.data.split, model_config, &scaler);
  const auto report = evaluate(model, data->split(split), split, settings.eval_batch_size, &data->scaler);
  auto file = open_output(out / "eval.jsonl");
  file << to_json_line(report) << '\n';
  std::cout << to_json_line(report, true) << '\n';
  if (!file) throw IoError("failed writing eval report");
  return kSuccess;
}

double median_step(const std::vector<double>& timestamps) {
  if (timestamps.size() < 2) return 1.0;
  std::vector<double> steps;
  for (std::size_t i = 1; i < timestamps.size(); ++i) steps.push_back(timestamps[i] - timestamps[i - 1]);
  const auto mid = steps.size() / 2;
  std::nth_element(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(mid), steps.end());
  double median = steps[mid];
  if (steps.size() % 2 == 0) {
    const double lower = *std::max_element(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median;
}

int cmd_forecast(const std::string& checkpoint, const std::string& input, const std::string& output) {
  const auto model_config = read_checkpoint_config(checkpoint);
  DpaNet<float> model(model_config);
  const auto scaler = scaler_from_extras(load_checkpoint(checkpoint, model), model_config.channels);

  const auto raw = load_csv(resolve_data_path(input));
  const auto L = model_config.input_length;
  const auto C = model_config.channels;
  if (raw.channels() != C) {
    throw DataError(input + " has " + std::to_string(raw.channels()) + " channels; checkpoint expects " +
                    std::to_string(C));
  }
  if (raw.rows() < L) {
    throw DataError(input + " has " + std::to_string(raw.rows()) + " rows; at least L_in=" + std::to_string(L) +
                    " are required");
  }
  const auto normalized = scaler.transform(raw);
  const std::size_t first = raw.rows() - L;
  std::vector<float> window(L * C);
  for (std::size_t i = 0; i < L * C; ++i) window[i] = static_cast<float>(normalized[first * C + i]);
  const auto x = numerics::Tensor<float>::from_data({1, L, C}, std::move(window));

  numerics::NoGradGuard no_grad;
  const auto forecast = model.forward(x).values;
  const auto values = forecast.data();

  RawDataset out;
  out.name = raw.name;
  out.timestamp_format = raw.timestamp_format;
  out.channel_names = raw.channel_names;
  const double step = median_step(raw.timestamps);
  const auto H = model_config.pred_length;
  for (std::size_t t = 0; t < H; ++t) {
    out.timestamps.push_back(raw.timestamps.back() + step * static_cast<double>(t + 1));
    for (std::size_t c = 0; c < C; ++c) out.values.push_back(scaler.inverse(values[t * C + c], c));
  }
  write_csv(output, out, out.timestamp_format == TimestampFormat::datetime ? "date" : "t");
  std::cout << "wrote " << H << " rows to " << output << '\n';
  return kSuccess;
}

// Reference ablation scores (MSE, MAE) per variant for the two benchmark
// datasets at the standard horizons, printed beside the measured table.
struct ReferenceRow {
  const char* dataset;
  std::size_t horizon;
  double scores[4][2];  // full, temporal_only, frequency_only, no_cross_fusion
};

// clang-format off
constexpr ReferenceRow kReference[] = {
    {"ETTm2", 96, {{0.173, 0.255}, {0.182, 0.276}, {0.186, 0.259}, {0.215, 0.295}}},
    {"ETTm2", 192, {{0.233, 0.297}, {0.242, 0.325}, {0.240, 0.319}, {0.268, 0.412}}},
    {"ETTm2", 336, {{0.291, 0.335}, {0.316, 0.362}, {0.309, 0.355}, {0.342, 0.468}}},
    {"ETTm2", 720, {{0.390, 0.395}, {0.412, 0.417}, {0.426, 0.409}, {0.461, 0.472}}},
    {"Weather", 96, {{0.168, 0.211}, {0.179, 0.223}, {0.176, 0.218}, {0.192, 0.253}}},
    {"Weather", 192, {{0.207, 0.246}, {0.220, 0.257}, {0.223, 0.242}, {0.243, 0.293}}},
    {"Weather", 336, {{0.250, 0.285}, {0.268, 0.312}, {0.261, 0.304}, {0.268, 0.332}}},
    {"Weather", 720, {{0.338, 0.339}, {0.351, 0.352}, {0.349, 0.346}, {0.373, 0.412}}},
};
// clang-format on

std::size_t variant_index(const std::string& variant) { return static_cast<std::size_t>(parse_variant(variant)); }

std::string fixed(double value, int digits = 3) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << value;
  return out.str();
}

int cmd_ablate(const CommonOptions& options) {
  auto resolved = resolve_with_data(options);
  const auto& s = resolved.settings;
  const auto out = prepare_out_dir(options.out_dir);
  resolved.config.write(out / "config.cfg");

  auto jsonl = open_output(out / "ablation.jsonl");
  auto csv = open_output(out / "ablation.csv");
  csv << "source,horizon";
  for (const auto& v : s.ablate_variants) csv << ',' << v << "_mse," << v << "_mae";
  csv << '\n';

  std::ostringstream table;
  table << std::left << std::setw(16) << "horizon";
  for (const auto& v : s.ablate_variants) table << std::setw(20) << v;
  table << '\n' << std::setw(16) << "";
  for (std::size_t i = 0; i < s.ablate_variants.size(); ++i) table << std::setw(20) << "MSE    MAE";
  table << '\n';

  for (const auto horizon : s.ablate_horizons) {
    ModelConfig base = s.model;
    base.pred_length = horizon;
    base.validate();
    auto data = prepare_data(resolved.raw, s.data.split, base, nullptr);
    table << std::setw(16) << horizon;
    csv << "measured," << horizon;
    for (const auto& variant : s.ablate_variants) {
      ModelConfig cfg = base;
      cfg.variant = parse_variant(variant);
      auto run = train_and_evaluate(s, cfg, *data, {});
      nlohmann::ordered_json record;
      record["variant"] = variant;
      record["horizon"] = horizon;
      record["mse"] = run.test.mse;
      record["mae"] = run.test.mae;
      record["epochs"] = run.result.history.size();
      record["steps"] = run.result.total_steps;
      jsonl << record.dump() << '\n';
      table << std::setw(20) << (fixed(run.test.mse) + "  " + fixed(run.test.mae));
      csv << ',' << run.test.mse << ',' << run.test.mae;
    }
    table << '\n';
    csv << '\n';
    for (const auto& ref : kReference) {
      if (ref.horizon != horizon) continue;
      table << std::setw(16) << ("  ref " + std::string(ref.dataset));
      csv << "reference_" << ref.dataset << ',' << horizon;
      for (const auto& variant : s.ablate_variants) {
        const auto& score = ref.scores[variant_index(variant)];
        table << std::setw(20) << (fixed(score[0]) + "  " + fixed(score[1]));
        csv << ',' << score[0] << ',' << score[1];
      }
      table << '\n';
      csv << '\n';
    }
  }
  std::cout << "test metrics on " << (resolved.raw.name.empty() ? "dataset" : resolved.raw.name)
            << " (standardized units)\n"
            << table.str();
  auto table_file = open_output(out / "ablation.txt");
  table_file << table.str();
  if (!jsonl || !csv || !table_file) throw IoError("failed writing ablation outputs");
  return kSuccess;
}

int cmd_gradcheck(const CommonOptions& options, const std::string& fault, double tolerance) {
  const auto settings = load_config(options).resolve();
  GradcheckOptions g;
  g.tolerance = tolerance;
  g.seed = settings.seed;
  if (!fault.empty()) g.inject_fault = fault;
  const auto results = run_gradcheck_suite(g);

  std::vector<std::string> failed;
  std::cout << std::left << std::setw(26) << "component" << std::setw(14) << "worst_error" << std::setw(10)
            << "checked" << "status\n";
  for (const auto& r : results) {
    const bool ok = r.worst_error < tolerance;
    if (!ok) failed.push_back(r.component);
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.worst_error;
    std::cout << std::setw(26) << r.component << std::setw(14) << err.str() << std::setw(10) << r.checked
              << (ok ? "ok" : "FAIL at " + r.worst_location) << '\n';
  }
  if (failed.empty()) {
    std::cout << "all " << results.size() << " components below " << tolerance << '\n';
    return kSuccess;
  }
  std::cerr << "gradient check failed:";
  for (const auto& name : failed) std::cerr << ' ' << name;
  std::cerr << '\n';
  return kNumerical;
}

int cmd_synth(const CommonOptions& options, const std::string& output) {
  auto config = load_config(options);
  config.set("data.source=synthetic");
  const auto settings = config.resolve();
  const auto& d = settings.data;
  auto raw = synth_multiperiodic(d.synth_rows, d.synth_channels, d.synth_periods, d.synth_amplitudes,
                                 d.synth_noise, settings.seed);
  const fs::path path(output);
  if (path.has_parent_path()) prepare_out_dir(path.parent_path().string());
  write_csv(path, raw, "t");
  std::cout << "wrote " << raw.rows() << " rows x " << raw.channels() << " channels to " << output << '\n';
  return kSuccess;
}

void report_error(const std::exception& e) {
  if (const auto* config = dynamic_cast<const ConfigError*>(&e)) {
    std::cerr << "error: invalid configuration\n";
    for (const auto& problem : config->problems()) std::cerr << "  " << problem << '\n';
    return;
  }
  std::cerr << "error: " << e.what() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app("Time-series forecaster fusing temporal and frequency pyramids", "dpanet");
  app.require_subcommand(1);
  app.footer("\n" + Config::reference() +
             "\nRelative data paths resolve against $DPANET_DATA_DIR.\n"
             "Exit codes: 0 success, 1 invalid input, 2 I/O error, 3 numerical failure.");

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, const std::string& default_out) {
    sub->add_option("--config", common.config_path, "key = value config file");
    sub->add_option("--set", common.overrides, "override one key (key=value); repeatable");
    if (!default_out.empty()) {
      common.out_dir = default_out;
      sub->add_option("--out", common.out_dir, "output directory")->capture_default_str();
    }
  };

  std::string checkpoint, split = "test", input, output, fault;
  double tolerance = 1e-3;

  auto* train_cmd = app.add_subcommand("train", "train a model and evaluate it on val/test");
  add_common(train_cmd, "runs/train");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  add_common(eval_cmd, "runs/eval");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "train | val | test")->capture_default_str();
  auto* forecast_cmd = app.add_subcommand("forecast", "forecast past the end of a CSV");
  forecast_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  forecast_cmd->add_option("--input", input, "CSV with at least L_in rows")->required();
  forecast_cmd->add_option("--output", output, "forecast CSV to write")->required();
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare every model variant");
  add_common(ablate_cmd, "runs/ablate");
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  add_common(gradcheck_cmd, "");
  gradcheck_cmd->add_option("--inject-fault", fault, "corrupt this kernel's backward pass (softmax)");
  gradcheck_cmd->add_option("--tolerance", tolerance, "relative error bound")->capture_default_str();
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic multi-periodic CSV");
  add_common(synth_cmd, "");
  synth_cmd->add_option("--output", output, "CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kValidation;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(common);
    if (eval_cmd->parsed()) return cmd_eval(common, checkpoint, split);
    if (forecast_cmd->parsed()) return cmd_forecast(checkpoint, input, output);
    if (ablate_cmd->parsed()) return cmd_ablate(common);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(common, fault, tolerance);
    if (synth_cmd->parsed()) return cmd_synth(common, output);
  } catch (const NumericalError& e) {
    report_error(e);
    return kNumerical;
  } catch (const IoError& e) {
    report_error(e);
    return kIo;
  } catch (const MalformedCheckpointError& e) {
    report_error(e);
    return kIo;
  } catch (const fs::filesystem_error& e) {
    report_error(e);
    return kIo;
  } catch (const std::exception& e) {
    report_error(e);
    return kValidation;
  }
  return kValidation;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"dpanet"};
  for (const auto& arg : args) argv.push_back(arg.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dpanet::cli
