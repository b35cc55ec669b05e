#include "condml/runner.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

namespace {

// Flag overrides applied on top of (or instead of) a config file.
condml::json apply_common_overrides(condml::json cfg, const std::string& out_dir, int threads) {
  if (!out_dir.empty()) cfg["output_dir"] = out_dir;
  if (threads >= 0) cfg["threads"] = threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"condml: debiased conditional-effect estimation and its Monte Carlo harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int threads = -1;

  auto* estimate = app.add_subcommand("estimate", "fit a conditional effect curve from a CSV");
  estimate->add_option("--config", config_path, "JSON config file")->required();
  estimate->add_option("--out", out_dir, "output directory (overrides config)");
  estimate->add_option("--threads", threads, "worker threads (0 = all cores)");

  std::string dgp, check;
  std::vector<long long> n_list;
  long long n_single = -1;
  long long reps = -1;
  long long seed = -1;
  std::vector<double> eps_list;
  auto* simulate = app.add_subcommand("simulate", "run the Monte Carlo verification checks");
  simulate->add_option("--config", config_path, "JSON config file");
  simulate->add_option("--dgp", dgp, "design: cate_binary | cate_continuous | quantile_ls");
  simulate->add_option("--check", check, "equivalence | orthogonality | rates | coverage | all");
  simulate->add_option("--n-list", n_list, "sample sizes")->delimiter(',');
  simulate->add_option("--n", n_single, "sample size for single-n checks");
  simulate->add_option("--reps", reps, "Monte Carlo replications");
  simulate->add_option("--seed", seed, "master seed");
  simulate->add_option("--eps-list", eps_list, "perturbation sizes")->delimiter(',');
  simulate->add_option("--out", out_dir, "output directory");
  simulate->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* diagnose =
      app.add_subcommand("diagnose", "heuristic rate/orthogonality checks on a user dataset");
  diagnose->add_option("--config", config_path, "JSON config file")->required();
  diagnose->add_option("--out", out_dir, "output directory (overrides config)");
  diagnose->add_option("--threads", threads, "worker threads (0 = all cores)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (estimate->parsed()) {
      condml::json cfg = condml::parse_json_file(config_path);
      return condml::run_estimate(apply_common_overrides(std::move(cfg), out_dir, threads));
    }
    if (simulate->parsed()) {
      condml::json cfg;
      if (!config_path.empty()) cfg = condml::parse_json_file(config_path);
      if (!dgp.empty()) cfg["dgp"] = dgp;
      if (!check.empty()) cfg["check"] = check;
      if (!n_list.empty()) cfg["n_list"] = n_list;
      if (n_single >= 0) cfg["n"] = n_single;
      if (reps >= 0) cfg["reps"] = reps;
      if (seed >= 0) cfg["seed"] = seed;
      if (!eps_list.empty()) cfg["eps_list"] = eps_list;
      return condml::run_simulate(apply_common_overrides(std::move(cfg), out_dir, threads));
    }
    condml::json cfg = condml::parse_json_file(config_path);
    return condml::run_diagnose(apply_common_overrides(std::move(cfg), out_dir, threads));
  } catch (const condml::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return condml::kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return condml::kExitInternal;
  }
}
