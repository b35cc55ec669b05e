#pragma once

#include "condml/csv.hpp"
#include "condml/engine.hpp"
#include "condml/sim.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace condml {

using json = nlohmann::ordered_json;

namespace cfgdetail {

inline void require_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("unknown key \"" + it.key() + "\" in section '" + section + "'");
    }
  }
}

inline double number_at(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  if (!obj.at(key).is_number()) throw ConfigError("field '" + key + "' must be a number");
  return obj.at(key).get<double>();
}

inline int int_at(const json& obj, const std::string& key, int fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  if (!obj.at(key).is_number_integer()) throw ConfigError("field '" + key + "' must be an integer");
  return obj.at(key).get<int>();
}

inline bool bool_at(const json& obj, const std::string& key, bool fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  if (!obj.at(key).is_boolean()) throw ConfigError("field '" + key + "' must be a boolean");
  return obj.at(key).get<bool>();
}

inline std::string string_at(const json& obj, const std::string& key, const std::string& fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  if (!obj.at(key).is_string()) throw ConfigError("field '" + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

inline std::string required_string(const json& obj, const std::string& key,
                                   const std::string& section) {
  if (!obj.contains(key) || !obj.at(key).is_string()) {
    throw ConfigError("section '" + section + "' requires string field '" + key + "'");
  }
  return obj.at(key).get<std::string>();
}

inline std::vector<std::string> string_list(const json& obj, const std::string& key) {
  std::vector<std::string> out;
  if (!obj.contains(key) || obj.at(key).is_null()) return out;
  if (!obj.at(key).is_array()) throw ConfigError("field '" + key + "' must be an array");
  for (const auto& v : obj.at(key)) {
    if (!v.is_string()) throw ConfigError("field '" + key + "' must contain strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::vector<double> number_list(const json& obj, const std::string& key) {
  std::vector<double> out;
  if (!obj.contains(key) || obj.at(key).is_null()) return out;
  if (!obj.at(key).is_array()) throw ConfigError("field '" + key + "' must be an array");
  for (const auto& v : obj.at(key)) {
    if (!v.is_number()) throw ConfigError("field '" + key + "' must contain numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace cfgdetail

/// A functional parameter accepted as a constant or as a z-column name.
struct ValueOrColumn {
  bool is_column = false;
  std::string column;
  double value = 0.0;

  static ValueOrColumn from_json(const json& j, const std::string& field) {
    ValueOrColumn out;
    if (j.is_number()) {
      out.value = j.get<double>();
    } else if (j.is_string()) {
      out.is_column = true;
      out.column = j.get<std::string>();
    } else {
      throw ConfigError("field '" + field + "' must be a number or a z column name");
    }
    return out;
  }

  ColumnOrConst resolve(const std::vector<std::string>& z_names, const std::string& field) const {
    if (!is_column) return ColumnOrConst::constant(value);
    for (std::size_t j = 0; j < z_names.size(); ++j) {
      if (z_names[j] == column) return ColumnOrConst::column(static_cast<Index>(j));
    }
    throw ConfigError("field '" + field + "': column '" + column + "' is not a z column");
  }
};

struct FunctionalConfig {
  std::string kind = "cate_binary";
  double nu = 0.5;
  double kappa = 0.0;
  ValueOrColumn omega{false, "", 1.0};
  ValueOrColumn price_lo{false, "", 0.0};
  ValueOrColumn price_hi{false, "", 1.0};
  std::string income_column;  // empty -> first z column

  MomentFunctional build(const std::vector<std::string>& z_names) const {
    if (kind == "cate_binary") return MomentFunctional::cate_binary();
    if (kind == "cate_continuous") return MomentFunctional::cate_continuous();
    if (kind == "quantile_derivative") return MomentFunctional::quantile_derivative(nu);
    if (kind == "ev_bound") {
      Index income = 0;
      if (!income_column.empty()) {
        bool found = false;
        for (std::size_t j = 0; j < z_names.size(); ++j) {
          if (z_names[j] == income_column) {
            income = static_cast<Index>(j);
            found = true;
          }
        }
        if (!found) {
          throw ConfigError("field 'income_column': '" + income_column + "' is not a z column");
        }
      }
      return MomentFunctional::ev_bound(omega.resolve(z_names, "omega"), kappa,
                                        price_lo.resolve(z_names, "price_lo"),
                                        price_hi.resolve(z_names, "price_hi"), income);
    }
    throw ConfigError("field 'kind': unknown functional '" + kind + "'");
  }
};

struct EstimateRun {
  std::string data_path;
  ColumnRoles roles;
  FunctionalConfig functional;
  EngineConfig engine;
  LlrConfig llr;
  std::uint64_t seed = 1;
  std::string output_dir = ".";
  unsigned threads = 0;
  json echo;  // normalized config for the report
};

namespace cfgdetail {

inline DictionaryConfig parse_dictionary(const json& j, const std::string& section) {
  require_keys(j, section,
               {"constant", "treatment", "degree", "interactions", "spline_knots", "spline_cols",
                "z_cols", "fourier_sin_cols", "fourier_freq", "treat_control_basis"});
  DictionaryConfig cfg;
  cfg.constant = bool_at(j, "constant", cfg.constant);
  cfg.treatment = bool_at(j, "treatment", cfg.treatment);
  cfg.degree = int_at(j, "degree", cfg.degree);
  cfg.treat_interactions = bool_at(j, "interactions", cfg.treat_interactions);
  cfg.spline_knots = int_at(j, "spline_knots", cfg.spline_knots);
  cfg.fourier_freq = int_at(j, "fourier_freq", cfg.fourier_freq);
  cfg.treat_control_basis = bool_at(j, "treat_control_basis", cfg.treat_control_basis);
  for (double v : number_list(j, "spline_cols")) cfg.spline_cols.push_back(static_cast<Index>(v));
  for (double v : number_list(j, "z_cols")) cfg.z_cols.push_back(static_cast<Index>(v));
  for (double v : number_list(j, "fourier_sin_cols")) {
    cfg.fourier_sin_cols.push_back(static_cast<Index>(v));
  }
  if (cfg.degree < 0) throw ConfigError("field 'degree' must be nonnegative");
  if (cfg.spline_knots < 0) throw ConfigError("field 'spline_knots' must be nonnegative");
  return cfg;
}

inline LearnerConfig parse_learner(const json& j) {
  require_keys(j, "learner", {"method", "lambda", "cv_folds", "propensity_clip"});
  LearnerConfig cfg;
  cfg.method = learner_from_name(string_at(j, "method", "ridge"));
  if (j.contains("lambda") && !j.at("lambda").is_null()) {
    const double lam = number_at(j, "lambda", 0.0);
    if (lam < 0.0) throw ConfigError("field 'lambda' must be nonnegative");
    cfg.lambda = lam;
  }
  cfg.cv_folds = int_at(j, "cv_folds", cfg.cv_folds);
  cfg.propensity_clip = number_at(j, "propensity_clip", cfg.propensity_clip);
  if (!(cfg.propensity_clip > 0.0 && cfg.propensity_clip < 0.5)) {
    throw ConfigError("field 'propensity_clip' must lie in (0, 0.5)");
  }
  return cfg;
}

inline RieszConfig parse_riesz(const json& j) {
  require_keys(j, "riesz", {"method", "lambda", "density_floor"});
  RieszConfig cfg;
  cfg.method = riesz_method_from_name(string_at(j, "method", "auto"));
  cfg.lambda = number_at(j, "lambda", cfg.lambda);
  if (cfg.lambda < 0.0) throw ConfigError("field 'riesz.lambda' must be nonnegative");
  cfg.density_floor = number_at(j, "density_floor", cfg.density_floor);
  if (!(cfg.density_floor > 0.0)) throw ConfigError("field 'density_floor' must be positive");
  return cfg;
}

inline LlrConfig parse_llr(const json& j) {
  require_keys(j, "llr", {"h", "h_grid", "undersmooth", "grid_points", "kernel"});
  LlrConfig cfg;
  if (j.contains("h") && !j.at("h").is_null()) {
    const double h = number_at(j, "h", 0.0);
    if (!(h > 0.0)) throw ConfigError("field 'llr.h' must be positive");
    cfg.h = h;
  }
  cfg.h_grid = number_list(j, "h_grid");
  for (double h : cfg.h_grid) {
    if (!(h > 0.0)) throw ConfigError("field 'llr.h_grid' entries must be positive");
  }
  cfg.undersmooth = number_at(j, "undersmooth", cfg.undersmooth);
  if (!(cfg.undersmooth > 0.0 && cfg.undersmooth <= 1.0)) {
    throw ConfigError("field 'undersmooth' must lie in (0, 1]");
  }
  cfg.grid_points = int_at(j, "grid_points", cfg.grid_points);
  if (cfg.grid_points < 1) throw ConfigError("field 'grid_points' must be positive");
  cfg.kernel = kernel_from_name(string_at(j, "kernel", "epanechnikov"));
  return cfg;
}

inline FunctionalConfig parse_functional(const json& j) {
  require_keys(j, "functional",
               {"kind", "nu", "kappa", "omega", "price_lo", "price_hi", "income_column"});
  FunctionalConfig cfg;
  cfg.kind = required_string(j, "kind", "functional");
  cfg.nu = number_at(j, "nu", cfg.nu);
  cfg.kappa = number_at(j, "kappa", cfg.kappa);
  if (j.contains("omega")) cfg.omega = ValueOrColumn::from_json(j.at("omega"), "omega");
  if (j.contains("price_lo")) cfg.price_lo = ValueOrColumn::from_json(j.at("price_lo"), "price_lo");
  if (j.contains("price_hi")) cfg.price_hi = ValueOrColumn::from_json(j.at("price_hi"), "price_hi");
  cfg.income_column = string_at(j, "income_column", "");
  return cfg;
}

inline ColumnRoles parse_columns(const json& j) {
  require_keys(j, "data.columns", {"y", "d", "z", "v", "v_transform"});
  ColumnRoles roles;
  roles.y = required_string(j, "y", "data.columns");
  roles.d = required_string(j, "d", "data.columns");
  roles.z = string_list(j, "z");
  roles.v = string_list(j, "v");
  roles.v_transform = string_at(j, "v_transform", "select");
  if (roles.z.empty()) throw ConfigError("field 'data.columns.z' must name at least one column");
  return roles;
}

}  // namespace cfgdetail

/// Parse and strictly validate an `estimate` (or `diagnose`) configuration.
/// Unknown keys anywhere are rejected with the offending key named.
inline EstimateRun parse_estimate_config(const json& root) {
  cfgdetail::require_keys(root, "config",
                          {"data", "functional", "learner", "dictionary", "alpha_dictionary",
                           "riesz", "llr", "folds", "alpha_off", "seed", "output_dir", "threads"});
  if (!root.contains("data")) throw ConfigError("missing required section 'data'");
  cfgdetail::require_keys(root.at("data"), "data", {"path", "columns"});

  EstimateRun run;
  run.data_path = cfgdetail::required_string(root.at("data"), "path", "data");
  if (!root.at("data").contains("columns")) {
    throw ConfigError("missing required section 'data.columns'");
  }
  run.roles = cfgdetail::parse_columns(root.at("data").at("columns"));
  if (root.contains("functional")) {
    run.functional = cfgdetail::parse_functional(root.at("functional"));
  }
  if (root.contains("learner")) run.engine.learner = cfgdetail::parse_learner(root.at("learner"));
  if (root.contains("dictionary")) {
    run.engine.gamma_dictionary = cfgdetail::parse_dictionary(root.at("dictionary"), "dictionary");
  }
  if (root.contains("alpha_dictionary")) {
    run.engine.alpha_dictionary =
        cfgdetail::parse_dictionary(root.at("alpha_dictionary"), "alpha_dictionary");
  }
  if (root.contains("riesz")) run.engine.riesz = cfgdetail::parse_riesz(root.at("riesz"));
  if (root.contains("llr")) run.llr = cfgdetail::parse_llr(root.at("llr"));
  run.engine.folds = cfgdetail::int_at(root, "folds", run.engine.folds);
  if (run.engine.folds < 2) throw ConfigError("field 'folds' must be at least 2");
  run.engine.alpha_off = cfgdetail::bool_at(root, "alpha_off", false);
  const double seed = cfgdetail::number_at(root, "seed", 1.0);
  if (seed < 0.0) throw ConfigError("field 'seed' must be nonnegative");
  run.seed = static_cast<std::uint64_t>(seed);
  run.output_dir = cfgdetail::string_at(root, "output_dir", ".");
  run.threads = static_cast<unsigned>(cfgdetail::int_at(root, "threads", 0));
  run.echo = root;
  return run;
}

struct SimulateRun {
  DgpSpec spec;
  std::string check = "all";  // equivalence | orthogonality | rates | coverage | all
  std::vector<Index> n_list{500, 2000, 8000};
  Index n = 4000;  // single-n checks (orthogonality, coverage)
  int reps = 50;
  std::vector<double> eps_list{0.4, 0.2, 0.1, 0.05};
  SimConfig sim;
  std::string output_dir = ".";
  json echo;
};

inline SimulateRun parse_simulate_config(const json& root) {
  cfgdetail::require_keys(root, "config",
                          {"dgp", "check", "n_list", "n", "reps", "eps_list", "seed",
                           "bandwidth_c", "undersmooth", "grid_points", "kernel",
                           "paired_plugin", "output_dir", "threads"});
  SimulateRun run;

  if (!root.contains("dgp")) throw ConfigError("missing required field 'dgp'");
  const json& dgp = root.at("dgp");
  std::string kind;
  if (dgp.is_string()) {
    kind = dgp.get<std::string>();
  } else {
    cfgdetail::require_keys(dgp, "dgp",
                            {"kind", "z_dim", "sigma", "nu", "constant_propensity",
                             "linear_gamma", "treat_sd"});
    kind = cfgdetail::required_string(dgp, "kind", "dgp");
  }
  if (kind == "cate_binary") {
    run.spec = DgpSpec::cate_binary();
  } else if (kind == "cate_continuous") {
    run.spec = DgpSpec::cate_continuous();
  } else if (kind == "quantile_ls") {
    run.spec = DgpSpec::quantile_ls();
  } else {
    throw ConfigError("field 'dgp': unknown design '" + kind + "'");
  }
  if (dgp.is_object()) {
    run.spec.z_dim = cfgdetail::int_at(dgp, "z_dim", run.spec.z_dim);
    run.spec.sigma = cfgdetail::number_at(dgp, "sigma", run.spec.sigma);
    run.spec.nu = cfgdetail::number_at(dgp, "nu", run.spec.nu);
    run.spec.treat_sd = cfgdetail::number_at(dgp, "treat_sd", run.spec.treat_sd);
    run.spec.constant_propensity =
        cfgdetail::bool_at(dgp, "constant_propensity", run.spec.constant_propensity);
    run.spec.linear_gamma = cfgdetail::bool_at(dgp, "linear_gamma", run.spec.linear_gamma);
    run.spec.validate();
  }

  run.check = cfgdetail::string_at(root, "check", run.check);
  if (run.check != "equivalence" && run.check != "orthogonality" && run.check != "rates" &&
      run.check != "coverage" && run.check != "all") {
    throw ConfigError("field 'check': unknown check '" + run.check + "'");
  }
  const auto n_list = cfgdetail::number_list(root, "n_list");
  if (!n_list.empty()) {
    run.n_list.clear();
    for (double n : n_list) {
      if (n < 1.0) throw ConfigError("field 'n_list' entries must be positive");
      run.n_list.push_back(static_cast<Index>(n));
    }
  }
  run.n = static_cast<Index>(cfgdetail::number_at(root, "n", static_cast<double>(run.n)));
  if (run.n < 1) throw ConfigError("field 'n' must be positive");
  run.reps = cfgdetail::int_at(root, "reps", run.reps);
  if (run.reps < 1) throw ConfigError("field 'reps' must be a positive integer");
  const auto eps = cfgdetail::number_list(root, "eps_list");
  if (!eps.empty()) run.eps_list = eps;

  run.sim.seed = static_cast<std::uint64_t>(cfgdetail::number_at(root, "seed", 1.0));
  run.sim.bandwidth_c = cfgdetail::number_at(root, "bandwidth_c", run.sim.bandwidth_c);
  run.sim.undersmooth = cfgdetail::number_at(root, "undersmooth", run.sim.undersmooth);
  run.sim.grid_points = cfgdetail::int_at(root, "grid_points", run.sim.grid_points);
  run.sim.kernel = kernel_from_name(cfgdetail::string_at(root, "kernel", "epanechnikov"));
  run.sim.paired_plugin = cfgdetail::bool_at(root, "paired_plugin", false);
  run.sim.threads = static_cast<unsigned>(cfgdetail::int_at(root, "threads", 0));
  run.output_dir = cfgdetail::string_at(root, "output_dir", ".");
  run.echo = root;
  return run;
}

struct DiagnoseRun {
  EstimateRun base;
  std::vector<double> subsample_fractions{0.25, 0.5, 1.0};
  int n_boot = 20;
  std::vector<double> eps_list{0.4, 0.2, 0.1, 0.05};
};

inline DiagnoseRun parse_diagnose_config(json root) {
  DiagnoseRun run;
  const json original = root;
  if (root.contains("subsample_fractions")) {
    run.subsample_fractions = cfgdetail::number_list(root, "subsample_fractions");
    for (double f : run.subsample_fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("field 'subsample_fractions' in (0, 1]");
    }
    root.erase("subsample_fractions");
  }
  if (root.contains("n_boot")) {
    run.n_boot = cfgdetail::int_at(root, "n_boot", run.n_boot);
    if (run.n_boot < 2) throw ConfigError("field 'n_boot' must be at least 2");
    root.erase("n_boot");
  }
  if (root.contains("eps_list")) {
    const auto eps = cfgdetail::number_list(root, "eps_list");
    if (!eps.empty()) run.eps_list = eps;
    root.erase("eps_list");
  }
  run.base = parse_estimate_config(root);
  run.base.echo = original;
  return run;
}

inline json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return root;
}

}  // namespace condml
