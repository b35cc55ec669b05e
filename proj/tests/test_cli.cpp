#include "condml/config.hpp"
#include "condml/csv.hpp"
#include "condml/report.hpp"
#include "condml/runner.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

using namespace condml;
namespace fs = std::filesystem;

std::string require_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v) throw std::runtime_error(std::string("missing env var ") + name);
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

CliResult run_cli(const std::string& args, const std::string& workdir) {
  static int counter = 0;
  const std::string out_file = testing::TempDir() + "cli_stdout_" + std::to_string(counter) + ".txt";
  const std::string err_file = testing::TempDir() + "cli_stderr_" + std::to_string(counter) + ".txt";
  ++counter;
  const std::string cli = require_env("CONDML_CLI");
  const std::string cmd = "cd '" + workdir + "' && '" + cli + "' " + args + " > '" + out_file +
                          "' 2> '" + err_file + "'";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WEXITSTATUS(raw);
  r.stdout_text = slurp(out_file);
  r.stderr_text = slurp(err_file);
  std::remove(out_file.c_str());
  std::remove(err_file.c_str());
  return r;
}

std::string fresh_dir(const std::string& tag) {
  const std::string dir = testing::TempDir() + "condml_cli_" + tag;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(CliEstimate, ShippedFixtureProducesArtifacts) {
  const std::string src = require_env("CONDML_SOURCE_DIR");
  const std::string out = fresh_dir("estimate");
  const CliResult r =
      run_cli("estimate --config data/example_estimate.json --out '" + out + "'", src);
  EXPECT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_NE(r.stdout_text.find("theta(center"), std::string::npos);

  // curve.csv: header plus the 41 default grid rows, re-readable by our parser.
  const CsvTable curve = read_csv(out + "/curve.csv");
  EXPECT_EQ(curve.rows(), 41);
  EXPECT_EQ(curve.header.front(), "v");

  const json report = json::parse(slurp(out + "/report.json"));
  EXPECT_EQ(report.at("command"), "estimate");
  EXPECT_EQ(report.at("curve").at("theta_hat").size(), 41u);
}

TEST(CliEstimate, UnknownKeyNamedAndRejected) {
  const std::string src = require_env("CONDML_SOURCE_DIR");
  const std::string dir = fresh_dir("badkey");
  json cfg = parse_json_file(src + "/data/example_estimate.json");
  cfg["data"]["path"] = src + "/data/example.csv";
  cfg["llr"]["bandwith"] = 0.3;  // deliberate misspelling
  write_text_file(dir + "/config.json", dump_json_17(cfg));
  const CliResult r = run_cli("estimate --config config.json", dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.stderr_text.find("bandwith"), std::string::npos);
}

TEST(CliEstimate, ByteIdenticalReportsAcrossRuns) {
  const std::string src = require_env("CONDML_SOURCE_DIR");
  const std::string out1 = fresh_dir("det1");
  const std::string out2 = fresh_dir("det2");
  const std::string args = "estimate --config data/example_estimate.json --out ";
  ASSERT_EQ(run_cli(args + "'" + out1 + "'", src).exit_code, 0);
  ASSERT_EQ(run_cli(args + "'" + out2 + "' --threads 2", src).exit_code, 0);
  EXPECT_EQ(slurp(out1 + "/report.json"), slurp(out2 + "/report.json"));
  EXPECT_EQ(slurp(out1 + "/curve.csv"), slurp(out2 + "/curve.csv"));
}

TEST(CliEstimate, MissingDataFileIsInputError) {
  const std::string src = require_env("CONDML_SOURCE_DIR");
  const std::string dir = fresh_dir("nodata");
  json cfg = parse_json_file(src + "/data/example_estimate.json");
  cfg["data"]["path"] = dir + "/does_not_exist.csv";
  write_text_file(dir + "/config.json", dump_json_17(cfg));
  const CliResult r = run_cli("estimate --config config.json", dir);
  EXPECT_EQ(r.exit_code, 2);
}

TEST(CliSimulate, ZeroRepsRejected) {
  const std::string dir = fresh_dir("reps0");
  const CliResult r = run_cli("simulate --dgp cate_binary --check coverage --reps 0", dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.stderr_text.find("reps"), std::string::npos);
}

TEST(CliSimulate, CheckAllEmitsFourSections) {
  const std::string dir = fresh_dir("all");
  const CliResult r = run_cli(
      "simulate --dgp cate_binary --check all --n-list 300,600 --n 400 --reps 3 --seed 5 "
      "--eps-list 0.4,0.2 --threads 2 --out '" + dir + "'",
      dir);
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  const json report = json::parse(slurp(dir + "/report.json"));
  const auto& checks = report.at("checks");
  EXPECT_TRUE(checks.contains("equivalence"));
  EXPECT_TRUE(checks.contains("orthogonality"));
  EXPECT_TRUE(checks.contains("rates"));
  EXPECT_TRUE(checks.contains("coverage"));
  EXPECT_TRUE(fs::exists(dir + "/per_rep.csv"));
}

TEST(CliSimulate, OrthogonalityReportsSlopeAndVerdict) {
  const std::string dir = fresh_dir("orth");
  const CliResult r = run_cli(
      "simulate --dgp cate_binary --check orthogonality --n 1500 --reps 8 --seed 3 "
      "--threads 2 --out '" + dir + "'",
      dir);
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  const json report = json::parse(slurp(dir + "/report.json"));
  const double slope = report.at("checks").at("orthogonality").at("joint_slope").get<double>();
  const bool within = std::abs(slope - 2.0) <= 0.3;
  const bool alpha_ok =
      report.at("checks").at("orthogonality").at("alpha_within_3se").get<bool>();
  const bool printed_pass = r.stdout_text.find("PASS orthogonality") != std::string::npos;
  EXPECT_EQ(printed_pass, within && alpha_ok);  // verdict matches the stated rule
}

TEST(CliSimulate, ReportJsonRoundTripsThroughOurSerializer) {
  const std::string dir = fresh_dir("roundtrip");
  const CliResult r = run_cli(
      "simulate --dgp cate_binary --check coverage --n 500 --reps 4 --seed 9 --threads 2 "
      "--out '" + dir + "'",
      dir);
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  const std::string text = slurp(dir + "/report.json");
  const json parsed = json::parse(text);
  EXPECT_EQ(dump_json_17(parsed), text);  // parse -> dump is the identity
}

TEST(CliDiagnose, HeuristicReportOnShippedData) {
  const std::string src = require_env("CONDML_SOURCE_DIR");
  const std::string out = fresh_dir("diag");
  const CliResult r =
      run_cli("diagnose --config data/example_diagnose.json --out '" + out + "'", src);
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_NE(r.stdout_text.find("HEURISTIC"), std::string::npos);
  const json report = json::parse(slurp(out + "/diagnose_report.json"));
  EXPECT_TRUE(report.at("heuristic").get<bool>());
  EXPECT_TRUE(report.at("rates").at("heuristic").get<bool>());
  EXPECT_TRUE(report.at("orthogonality").at("heuristic").get<bool>());
}

TEST(CliGeneral, BadSubcommandAndMissingConfig) {
  const std::string dir = fresh_dir("misc");
  EXPECT_NE(run_cli("estimate", dir).exit_code, 0);          // --config required
  EXPECT_NE(run_cli("frobnicate", dir).exit_code, 0);        // unknown subcommand
  const CliResult r = run_cli("estimate --config missing.json", dir);
  EXPECT_EQ(r.exit_code, 2);
}

// Exit code 3 on a numerical failure with a stage label.
TEST(CliEstimate, NumericalFailureHasExitThree) {
  const std::string src = require_env("CONDML_SOURCE_DIR");
  const std::string dir = fresh_dir("numfail");
  json cfg = parse_json_file(src + "/data/example_estimate.json");
  cfg["data"]["path"] = src + "/data/example.csv";
  cfg["llr"]["h_grid"] = {1e-7};  // every candidate isolates each point
  write_text_file(dir + "/config.json", dump_json_17(cfg));
  const CliResult r = run_cli("estimate --config config.json", dir);
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.stderr_text.find("bandwidth"), std::string::npos);
}

}  // namespace
