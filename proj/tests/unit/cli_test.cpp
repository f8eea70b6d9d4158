#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dpanet/checkpoint.hpp"
#include "dpanet/cli/commands.hpp"
#include "dpanet/cli/config.hpp"
#include "dpanet/error.hpp"

namespace {

using namespace dpanet;
using cli::Config;
namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("dpanet_cli_test_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Runs the CLI with stdout and stderr captured.
struct Captured {
  int code;
  std::string out, err;
};

Captured run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  auto* saved_out = std::cout.rdbuf(out.rdbuf());
  auto* saved_err = std::cerr.rdbuf(err.rdbuf());
  const int code = cli::run(args);
  std::cout.rdbuf(saved_out);
  std::cerr.rdbuf(saved_err);
  return {code, out.str(), err.str()};
}

TEST(Config, DefaultsResolve) {
  const auto s = Config().resolve();
  EXPECT_EQ(s.model.input_length, 96u);
  EXPECT_EQ(s.model.num_levels, 4u);
  EXPECT_EQ(s.model.channels, 0u);
  EXPECT_EQ(s.train.batch_size, 32u);
  EXPECT_EQ(s.data.split, SplitPolicy::ett_hourly);
  EXPECT_EQ(s.ablate_variants.size(), 4u);
}

TEST(Config, FileSectionsCommentsAndOverrides) {
  TempDir dir;
  write_text(dir / "run.cfg",
             "# experiment\n"
             "seed = 9\n"
             "[model]\n"
             "L_pred = 192   # horizon\n"
             "d_model = 32\n"
             "[train]\n"
             "lr = 0.001\n");
  Config config;
  config.load_file(dir / "run.cfg");
  config.set("model.d_model=48");
  const auto s = config.resolve();
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.train.seed, 9u);
  EXPECT_EQ(s.model.pred_length, 192u);
  EXPECT_EQ(s.model.d_model, 48u);
  EXPECT_DOUBLE_EQ(s.train.adam.lr, 0.001);
}

TEST(Config, EveryProblemReportedAtOnce) {
  TempDir dir;
  write_text(dir / "bad.cfg", "model.S = 7\nmodel.colour = blue\n");
  Config config;
  config.load_file(dir / "bad.cfg");
  config.set("train.lr=fast");
  config.set("model.heads=5");
  config.set("model.variant=hybrid");
  try {
    config.resolve();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string all = e.what();
    EXPECT_GE(e.problems().size(), 5u) << all;
    EXPECT_NE(all.find("bad.cfg:2"), std::string::npos) << all;
    EXPECT_NE(all.find("model.colour"), std::string::npos) << all;
    EXPECT_NE(all.find("train.lr"), std::string::npos) << all;
    EXPECT_NE(all.find("2^(S-1)"), std::string::npos) << all;
    EXPECT_NE(all.find("heads"), std::string::npos) << all;
    EXPECT_NE(all.find("hybrid"), std::string::npos) << all;
  }
}

TEST(Config, MalformedAssignment) {
  Config config;
  config.set("model.d_model");
  EXPECT_THROW(config.resolve(), ConfigError);
}

TEST(Config, SerializedFormReloadsIdentically) {
  TempDir dir;
  Config config;
  config.set("model.L_pred=336");
  config.set("data.synth.periods=24,168");
  config.set("data.synth.amplitudes=1,0.5");
  config.write(dir / "resolved.cfg");
  Config reloaded;
  reloaded.load_file(dir / "resolved.cfg");
  EXPECT_EQ(reloaded.serialize(), config.serialize());
  EXPECT_EQ(reloaded.resolve().data.synth_periods, (std::vector<double>{24, 168}));
}

TEST(Config, ReferenceListsEveryKeyWithDefault) {
  const auto reference = Config::reference();
  std::istringstream lines(Config().serialize());
  std::string line;
  while (std::getline(lines, line)) {
    const auto key = line.substr(0, line.find(" = "));
    const auto value = line.substr(line.find(" = ") + 3);
    EXPECT_NE(reference.find(key), std::string::npos) << key;
    EXPECT_NE(reference.find("[" + value + "]"), std::string::npos) << key;
  }
}

TEST(Config, DataPathResolvesAgainstEnvironment) {
  ::setenv("DPANET_DATA_DIR", "/data/root", 1);
  EXPECT_EQ(cli::resolve_data_path("ETTh1.csv"), fs::path("/data/root/ETTh1.csv"));
  EXPECT_EQ(cli::resolve_data_path("/abs/x.csv"), fs::path("/abs/x.csv"));
  ::unsetenv("DPANET_DATA_DIR");
  EXPECT_EQ(cli::resolve_data_path("ETTh1.csv"), fs::path("ETTh1.csv"));
}

TEST(Commands, HelpEnumeratesConfigKeys) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, cli::kSuccess);
  EXPECT_NE(r.out.find("model.d_model"), std::string::npos);
  EXPECT_NE(r.out.find("ablate.horizons"), std::string::npos);
  EXPECT_NE(r.out.find("DPANET_DATA_DIR"), std::string::npos);
}

TEST(Commands, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kValidation);
  const auto missing = run_cli({"train", "--set", "data.path=" + (dir / "absent.csv").string(), "--out",
                                (dir / "out").string()});
  EXPECT_EQ(missing.code, cli::kIo);
  EXPECT_NE(missing.err.find("absent.csv"), std::string::npos);

  const auto invalid = run_cli({"train", "--set", "model.S=7", "--set", "nope=1"});
  EXPECT_EQ(invalid.code, cli::kValidation);
  EXPECT_NE(invalid.err.find("L_in"), std::string::npos);
  EXPECT_NE(invalid.err.find("nope"), std::string::npos);

  write_text(dir / "broken.ckpt", "not a checkpoint");
  EXPECT_EQ(run_cli({"eval", "--checkpoint", (dir / "broken.ckpt").string()}).code, cli::kIo);
}

TEST(Commands, SynthIsSeeded) {
  TempDir dir;
  for (const char* name : {"a.csv", "b.csv"}) {
    ASSERT_EQ(run_cli({"synth", "--set", "seed=4", "--set", "data.synth.rows=50", "--output",
                       (dir / name).string()}).code,
              0);
  }
  EXPECT_EQ(run_cli({"synth", "--set", "seed=5", "--set", "data.synth.rows=50", "--output",
                     (dir / "c.csv").string()}).code,
            0);
  EXPECT_EQ(read_text(dir / "a.csv"), read_text(dir / "b.csv"));
  EXPECT_NE(read_text(dir / "a.csv"), read_text(dir / "c.csv"));
  EXPECT_EQ(load_csv(dir / "a.csv").rows(), 50u);
}

class ForecastTest : public ::testing::Test {
 protected:
  void SetUp() override {
    config_.input_length = 16;
    config_.pred_length = 6;
    config_.channels = 2;
    config_.num_levels = 2;
    config_.d_model = 8;
    config_.heads = 2;
    config_.d_ff = 16;
    DpaNet<float> model(config_, 3);
    scaler_.mean = {10.0, -2.0};
    scaler_.std = {3.0, 0.5};
    save_checkpoint(dir_ / "model.ckpt", model,
                    {{"data.scaler.mean", {2}, scaler_.mean}, {"data.scaler.std", {2}, scaler_.std}});

    // 20 hourly rows with one irregular gap; the median step stays one hour.
    std::ostringstream csv;
    csv << "date,load,temp\n";
    std::mt19937_64 rng(1);
    std::normal_distribution<double> noise;
    for (int r = 0; r < 20; ++r) {
      const int hour = r < 10 ? r : r + 2;
      csv << "2020-01-01 " << (hour < 10 ? "0" : "") << hour << ":00:00," << 10 + 3 * noise(rng) << ','
          << -2 + 0.5 * noise(rng) << '\n';
    }
    write_text(dir_ / "input.csv", csv.str());
  }

  TempDir dir_;
  ModelConfig config_;
  Scaler scaler_;
};

TEST_F(ForecastTest, MatchesLibraryForwardExactly) {
  const auto r = run_cli({"forecast", "--checkpoint", (dir_ / "model.ckpt").string(), "--input",
                          (dir_ / "input.csv").string(), "--output", (dir_ / "forecast.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = load_csv(dir_ / "forecast.csv");
  ASSERT_EQ(out.rows(), 6u);
  EXPECT_EQ(out.channel_names, (std::vector<std::string>{"load", "temp"}));
  EXPECT_EQ(read_text(dir_ / "forecast.csv").substr(0, 15), "date,load,temp\n");

  const auto input = load_csv(dir_ / "input.csv");
  for (std::size_t t = 0; t < 6; ++t) {
    EXPECT_EQ(out.timestamps[t], input.timestamps.back() + 3600.0 * static_cast<double>(t + 1));
  }

  DpaNet<float> model(config_, 0);
  load_checkpoint(dir_ / "model.ckpt", model);
  std::vector<float> window;
  for (std::size_t row = 4; row < 20; ++row) {
    for (std::size_t c = 0; c < 2; ++c) {
      window.push_back(static_cast<float>((input.at(row, c) - scaler_.mean[c]) / scaler_.std[c]));
    }
  }
  const auto y = model.forward(numerics::Tensor<float>::from_data({1, 16, 2}, window)).values;
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(out.at(t, c), scaler_.inverse(y.data()[t * 2 + c], c)) << t << "," << c;
    }
  }
}

TEST_F(ForecastTest, RejectsShortInput) {
  std::ifstream in(dir_ / "input.csv");
  std::string text, line;
  for (int i = 0; i < 10 && std::getline(in, line); ++i) text += line + "\n";
  write_text(dir_ / "short.csv", text);
  const auto r = run_cli({"forecast", "--checkpoint", (dir_ / "model.ckpt").string(), "--input",
                          (dir_ / "short.csv").string(), "--output", (dir_ / "f.csv").string()});
  EXPECT_EQ(r.code, cli::kValidation);
  EXPECT_NE(r.err.find("L_in=16"), std::string::npos) << r.err;
}

TEST_F(ForecastTest, RejectsCheckpointWithoutScaler) {
  DpaNet<float> model(config_, 3);
  save_checkpoint(dir_ / "bare.ckpt", model);
  const auto r = run_cli({"forecast", "--checkpoint", (dir_ / "bare.ckpt").string(), "--input",
                          (dir_ / "input.csv").string(), "--output", (dir_ / "f.csv").string()});
  EXPECT_EQ(r.code, cli::kValidation);
  EXPECT_NE(r.err.find("scaler"), std::string::npos);
}

TEST(Gradcheck, InjectedAttentionFaultIsNamed) {
  const auto r = run_cli({"gradcheck", "--inject-fault", "softmax"});
  EXPECT_EQ(r.code, cli::kNumerical);
  EXPECT_NE(r.err.find("cross_attention"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"gradcheck", "--inject-fault", "matmul"}).code, cli::kValidation);
}

}  // namespace
