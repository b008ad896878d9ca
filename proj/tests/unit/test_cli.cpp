#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "stockformer/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args, const fs::path& cwd) {
  const auto out_file = cwd / "stdout.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && '" STOCKFORMER_CLI "' " + args + " > '" + out_file.string() + "' 2>/dev/null";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("stockformer_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

constexpr const char* kTiny = " --epochs 2 --d-model 8 --heads 2 --enc-layers 1 --dec-layers 1 --lstm-hidden 4";

}  // namespace

TEST_F(Cli, DataPreparationChain) {
  ASSERT_EQ(run("synth --seed 3 --days 200 --tickers AAA,BBB --out raw.csv", dir).code, 0);
  ASSERT_EQ(run("indicators --in raw.csv --out ind.csv", dir).code, 0);
  ASSERT_EQ(run("sentiment --in ind.csv --out sent.csv", dir).code, 0);
  auto loaded = stockformer::load_csv(dir / "sent.csv");
  ASSERT_EQ(loaded.series.size(), 2u);
  const auto& s = loaded.series[0];
  EXPECT_EQ(s.size(), 200u);
  EXPECT_FALSE(s.entries[50].indicators);
  ASSERT_TRUE(s.entries[51].indicators);
  for (const auto& e : s.entries) EXPECT_TRUE(e.sentiment);
  // matches the library pipeline exactly
  auto lib = stockformer::annotate(stockformer::synth_series("AAA", 200, 3, stockformer::Regime::mix), {});
  EXPECT_EQ(s.entries[120].indicators->rsi, lib.entries[120].indicators->rsi);
}

TEST_F(Cli, TrainEvaluatePredict) {
  ASSERT_EQ(run("synth --seed 4 --days 200 --tickers AAA,BBB --out raw.csv", dir).code, 0);
  const auto trained = run(std::string("train --seed 1 --data raw.csv --lag 4 --model bilstm --out ck") + kTiny, dir);
  ASSERT_EQ(trained.code, 0);
  for (const char* f : {"config.json", "params.csv", "norm.csv", "loss.csv", "report.csv"}) EXPECT_TRUE(fs::exists(dir / "ck" / f)) << f;
  // evaluating the checkpoint reproduces the report printed by train
  const auto evaluated = run("evaluate --checkpoint ck", dir);
  ASSERT_EQ(evaluated.code, 0);
  EXPECT_EQ(evaluated.out, trained.out);

  const auto predicted = run("predict --checkpoint ck --ticker BBB", dir);
  ASSERT_EQ(predicted.code, 0);
  EXPECT_NE(predicted.out.find("BBB,"), std::string::npos);
  EXPECT_EQ(run("predict --checkpoint ck", dir).code, 1);  // two tickers, none chosen
}

TEST_F(Cli, PerTickerCheckpoint) {
  ASSERT_EQ(run("synth --seed 4 --days 200 --tickers AAA,BBB --out raw.csv", dir).code, 0);
  const auto trained =
      run(std::string("train --seed 1 --data raw.csv --lag 3 --model bilstm --per-ticker true --out ck") + kTiny, dir);
  ASSERT_EQ(trained.code, 0);
  EXPECT_TRUE(fs::exists(dir / "ck" / "params_AAA.csv"));
  EXPECT_TRUE(fs::exists(dir / "ck" / "params_BBB.csv"));
  EXPECT_EQ(run("evaluate --checkpoint ck", dir).out, trained.out);
  EXPECT_EQ(run("predict --checkpoint ck --ticker AAA", dir).code, 0);
}

TEST_F(Cli, SweepWritesReport) {
  const auto r = run(std::string("sweep --seed 2 --lags 3,5 --synth-days 180 --synth-tickers AAA,BBB --out rep") + kTiny, dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("baseline"), std::string::npos);
  std::ifstream in(dir / "rep" / "results.csv");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 5);
}

TEST_F(Cli, ConfigFileWithOverrides) {
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"lags": [3], "models": ["bilstm"], "synth_days": 170, "synth_tickers": ["ZZZ"], "epochs": 5})";
  }
  ASSERT_EQ(run("sweep --config cfg.json --seed 9 --epochs 1 --out rep", dir).code, 0);
  std::ifstream loss(dir / "rep" / "loss_bilstm_3.csv");
  std::string line;
  int rows = 0;
  while (std::getline(loss, line)) ++rows;
  EXPECT_EQ(rows, 2);  // header + the overridden single epoch
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("", dir).code, 1);
  EXPECT_EQ(run("--help", dir).code, 0);
  EXPECT_EQ(run("train --out ck", dir).code, 1);                      // --seed is mandatory
  EXPECT_EQ(run("sweep --out rep", dir).code, 1);
  EXPECT_EQ(run("train --seed 1 --heads 7 --out ck", dir).code, 1);   // invalid config
  EXPECT_EQ(run("train --seed 1 --data missing.csv --out ck", dir).code, 2);
  {
    std::ofstream(dir / "bad.json") << R"({"no_such_field": 1})";
  }
  EXPECT_EQ(run("sweep --seed 1 --config bad.json --out rep", dir).code, 1);
  {
    std::ofstream(dir / "garbage.csv") << "date,ticker,open\n";
  }
  EXPECT_EQ(run("indicators --in garbage.csv --out x.csv", dir).code, 2);
  // a learning rate this large drives the loss to infinity
  EXPECT_EQ(run(std::string("train --seed 1 --synth-days 160 --synth-tickers AAA --lag 3 --model bilstm --lr 1e300 --out ck") + kTiny, dir).code, 3);
}
