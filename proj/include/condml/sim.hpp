#pragma once

#include "condml/common.hpp"
#include "condml/dataset.hpp"
#include "condml/engine.hpp"
#include "condml/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace condml {

/// Synthetic data generating process with analytic first-step oracles.
///
/// Shipped designs (Z ~ Uniform(0,1)^d, V = first r coordinates of Z):
///  (a) binary CATE: pi0(z) = 0.25 + 0.5 z1, gamma0(d,z) = d (1 + z1) + sin(pi z2),
///      so theta0(v) = 1 + v1 and alpha0 = d/pi0 - (1-d)/(1-pi0);
///  (b) continuous CATE: D | Z ~ N(z1, treat_sd^2), same gamma0, Gaussian score
///      alpha0 = (d - z1) / treat_sd^2;
///  (c) quantile location-scale: Y = D + D z1 + z2 + sigma (1 + z1) eps with
///      eps standard normal, so the nu-quantile of Y | X and its treatment
///      derivative are closed-form.
struct DgpSpec {
  enum class Kind { CateBinary, CateContinuous, QuantileLS };

  Kind kind = Kind::CateBinary;
  int z_dim = 2;
  int v_dim = 1;
  double sigma = 1.0;
  double nu = 0.5;          // quantile level for the location-scale design
  double treat_sd = 1.0;    // continuous-treatment noise scale
  bool constant_propensity = false;  // pi0 = 0.5 (alpha0 in a finite span)
  bool linear_gamma = false;         // replace sin(pi z2) with z2

  static DgpSpec cate_binary(int d = 2, double sigma = 1.0) {
    DgpSpec s;
    s.kind = Kind::CateBinary;
    s.z_dim = d;
    s.sigma = sigma;
    s.validate();
    return s;
  }

  static DgpSpec cate_continuous(int d = 2, double sigma = 1.0) {
    DgpSpec s;
    s.kind = Kind::CateContinuous;
    s.z_dim = d;
    s.sigma = sigma;
    s.validate();
    return s;
  }

  static DgpSpec quantile_ls(double nu = 0.5, int d = 2, double sigma = 1.0) {
    DgpSpec s;
    s.kind = Kind::QuantileLS;
    s.z_dim = d;
    s.sigma = sigma;
    s.nu = nu;
    s.validate();
    return s;
  }

  void validate() const {
    if (z_dim < 2) throw std::invalid_argument("dgp: z_dim must be at least 2");
    if (v_dim < 1 || v_dim > z_dim) throw std::invalid_argument("dgp: bad v_dim");
    if (kind == Kind::QuantileLS && !(nu > 0.0 && nu < 1.0)) {
      throw std::invalid_argument("dgp: quantile level in (0,1)");
    }
  }

  std::string name() const {
    switch (kind) {
      case Kind::CateBinary: return "cate_binary";
      case Kind::CateContinuous: return "cate_continuous";
      case Kind::QuantileLS: return "quantile_ls";
    }
    return "unknown";
  }

  double pi0(const Eigen::Ref<const VectorXd>& z) const {
    return constant_propensity ? 0.5 : 0.25 + 0.5 * z[0];
  }

  /// Conditional mean (a, b) or conditional nu-quantile (c) of Y given X.
  double gamma0(const Eigen::Ref<const VectorXd>& x) const {
    const double d = x[0];
    const double z1 = x[1];
    const double z2 = x[2];
    switch (kind) {
      case Kind::CateBinary:
      case Kind::CateContinuous:
        return d * (1.0 + z1) + (linear_gamma ? z2 : std::sin(kPi * z2));
      case Kind::QuantileLS:
        return location(x) + sigma * (1.0 + z1) * normal_quantile_cached();
    }
    return 0.0;
  }

  double theta0(const Eigen::Ref<const VectorXd>& v) const { return 1.0 + v[0]; }

  double alpha0(const Eigen::Ref<const VectorXd>& x) const {
    const double d = x[0];
    const double z1 = x[1];
    switch (kind) {
      case Kind::CateBinary: {
        VectorXd z = x.tail(x.size() - 1);
        const double p = pi0(z);
        return d / p - (1.0 - d) / (1.0 - p);
      }
      case Kind::CateContinuous:
        return (d - z1) / (treat_sd * treat_sd);
      case Kind::QuantileLS:
        // alpha0 = -v_m / v_rho with v_m the Gaussian treatment score and
        // v_rho the conditional outcome density at the quantile.
        return -((d - z1) / (treat_sd * treat_sd)) / vrho0(x);
    }
    return 0.0;
  }

  /// Slope of E[rho(W, gamma0 + a) | X] in a at zero: -1 for mean designs,
  /// the conditional density of Y at its nu-quantile for the quantile design.
  double vrho0(const Eigen::Ref<const VectorXd>& x) const {
    if (kind != Kind::QuantileLS) return -1.0;
    const double scale = sigma * (1.0 + x[1]);
    return normal_pdf(normal_quantile_cached()) / scale;
  }

  MomentFunctional functional() const {
    switch (kind) {
      case Kind::CateBinary: return MomentFunctional::cate_binary();
      case Kind::CateContinuous: return MomentFunctional::cate_continuous();
      case Kind::QuantileLS: return MomentFunctional::quantile_derivative(nu);
    }
    return MomentFunctional::cate_binary();
  }

  Dataset generate(Index n, std::uint64_t seed) const {
    validate();
    if (n < 1) throw std::invalid_argument("dgp: n must be positive");
    Rng rng(derive_seed(seed, 0xd6700000ULL + static_cast<std::uint64_t>(kind)));
    MatrixXd z(n, z_dim);
    VectorXd d(n);
    VectorXd y(n);
    VectorXd x(z_dim + 1);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < z_dim; ++j) z(i, j) = rng.uniform01();
      switch (kind) {
        case Kind::CateBinary:
          d[i] = rng.bernoulli(pi0(z.row(i).transpose())) ? 1.0 : 0.0;
          break;
        case Kind::CateContinuous:
        case Kind::QuantileLS:
          d[i] = rng.normal(z(i, 0), treat_sd);
          break;
      }
      x[0] = d[i];
      x.tail(z_dim) = z.row(i).transpose();
      if (kind == Kind::QuantileLS) {
        y[i] = location(x) + sigma * (1.0 + z(i, 0)) * rng.normal();
      } else {
        const double noiseless = gamma0(x);
        y[i] = noiseless + sigma * rng.normal();
      }
    }
    MatrixXd v = z.leftCols(v_dim);
    return Dataset(std::move(y), std::move(d), std::move(z), std::move(v));
  }

  /// Dictionaries matched to the design: the gamma dictionary spans gamma0 up
  /// to spline error, the alpha dictionary spans (or closely approximates)
  /// alpha0.
  DictionaryConfig gamma_dictionary() const {
    DictionaryConfig cfg;
    cfg.constant = true;
    cfg.treatment = true;
    cfg.degree = 1;
    cfg.treat_interactions = true;
    cfg.z_cols = {0, 1};
    if (!linear_gamma && kind != Kind::QuantileLS) cfg.fourier_sin_cols = {1};
    return cfg;
  }

  DictionaryConfig alpha_dictionary() const {
    DictionaryConfig cfg;
    switch (kind) {
      case Kind::CateBinary:
        cfg.constant = false;
        cfg.treatment = false;
        cfg.treat_control_basis = true;
        cfg.degree = 1;
        cfg.z_cols = {0};
        if (!constant_propensity) {
          cfg.spline_knots = 8;
          cfg.spline_cols = {0};
        }
        break;
      case Kind::CateContinuous:
        cfg.constant = true;
        cfg.treatment = true;
        cfg.degree = 1;
        cfg.z_cols = {0};
        break;
      case Kind::QuantileLS:
        cfg.constant = true;
        cfg.treatment = true;
        cfg.degree = 2;
        cfg.z_cols = {0};
        cfg.treat_interactions = true;
        break;
    }
    return cfg;
  }

  EngineConfig engine_config() const {
    EngineConfig cfg;
    cfg.gamma_dictionary = gamma_dictionary();
    cfg.alpha_dictionary = alpha_dictionary();
    cfg.folds = 5;
    cfg.learner.method = LearnerMethod::Ridge;
    cfg.learner.lambda = 1e-6;
    switch (kind) {
      case Kind::CateBinary:
      case Kind::CateContinuous:
        cfg.riesz.method = RieszMethod::Auto;
        cfg.riesz.lambda = 0.0;
        break;
      case Kind::QuantileLS:
        // the quantile dictionary is small and well conditioned; the check
        // loss needs no penalty and the unpenalized solver is the fast path
        cfg.learner.lambda = 0.0;
        cfg.riesz.method = RieszMethod::AutoWeighted;
        cfg.riesz.lambda = 0.0;
        break;
    }
    return cfg;
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;

  double location(const Eigen::Ref<const VectorXd>& x) const {
    // mu(x) = d + d z1 + z2 for the location-scale design
    return x[0] + x[0] * x[1] + x[2];
  }

  double normal_quantile_cached() const {
    return nu == 0.5 ? 0.0 : normal_quantile(nu);
  }
};

// ---------------------------------------------------------------------------
// Monte Carlo verification harness.

struct SimConfig {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  double bandwidth_c = 1.0;   // h = c * n^{-1/(r+4)}, then undersmoothed
  double undersmooth = 0.8;
  int grid_points = 41;
  KernelFamily kernel = KernelFamily::Epanechnikov;
  std::optional<EngineConfig> engine;     // override the DGP preset
  bool oracle_override = false;           // equivalence: gamma_hat = gamma0 etc.
  std::optional<double> frozen_gamma_constant;  // rates: freeze gamma_hat wrong
  Index rate_eval_size = 4000;
  bool paired_plugin = false;             // coverage: also score the plug-in curve
};

inline double rate_bandwidth(const DgpSpec& spec, Index n, const SimConfig& cfg) {
  const double r = static_cast<double>(spec.v_dim);
  return cfg.bandwidth_c * std::pow(static_cast<double>(n), -1.0 / (r + 4.0)) * cfg.undersmooth;
}

struct EquivalenceRow {
  Index n = 0;
  double delta = 0.0;   // median |theta_hat - theta_tilde| at the central point
  double spread = 0.0;  // IQR of theta_tilde at the central point
  double ratio = 0.0;
  double bandwidth = 0.0;
};

struct EquivalencePerRep {
  Index n = 0;
  int rep = 0;
  double theta_hat = 0.0;
  double theta_tilde = 0.0;
  double theta_true = 0.0;
};

struct EquivalenceReport {
  std::vector<EquivalenceRow> rows;
  std::vector<EquivalencePerRep> per_rep;
  bool strictly_decreasing = false;
  bool low_confidence = false;  // reps < 2
};

namespace detail {

inline Index central_grid_index(const MatrixXd& grid) { return grid.rows() / 2; }

}  // namespace detail

/// Desk-scale check that the feasible and oracle locally linear estimators
/// coincide to first order: the median gap at the central grid point,
/// relative to the oracle's own sampling spread, should fall as n grows.
inline EquivalenceReport check_equivalence(const DgpSpec& spec, const std::vector<Index>& n_list,
                                           int reps, const SimConfig& cfg) {
  if (reps < 1) throw std::invalid_argument("check_equivalence: reps must be positive");
  const MomentFunctional mf_template = spec.functional();
  const EngineConfig engine = cfg.engine.value_or(spec.engine_config());
  const Kernel kernel{cfg.kernel};

  EquivalenceReport report;
  report.low_confidence = reps < 2;

  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    const Index n = n_list[ni];
    const double h = rate_bandwidth(spec, n, cfg);
    std::vector<double> dev(static_cast<std::size_t>(reps),
                            std::numeric_limits<double>::quiet_NaN());
    std::vector<double> tilde(static_cast<std::size_t>(reps),
                              std::numeric_limits<double>::quiet_NaN());
    std::vector<double> hat(static_cast<std::size_t>(reps),
                            std::numeric_limits<double>::quiet_NaN());
    std::vector<double> truth(static_cast<std::size_t>(reps),
                              std::numeric_limits<double>::quiet_NaN());

    parallel_for(static_cast<std::size_t>(reps), cfg.threads, [&](std::size_t rep) {
      const std::uint64_t rep_seed =
          derive_seed(derive_seed(cfg.seed, 0xe100 + ni), static_cast<std::uint64_t>(rep));
      const Dataset ds = spec.generate(n, rep_seed);
      MomentFunctional mf = mf_template;
      mf.bind(ds);
      const MatrixXd grid = default_grid(ds.v(), cfg.grid_points);
      const Index center = detail::central_grid_index(grid);

      auto g0 = [&](const Eigen::Ref<const VectorXd>& x) { return spec.gamma0(x); };
      auto a0 = [&](const Eigen::Ref<const VectorXd>& x) { return spec.alpha0(x); };
      const LocalLinearCurve oracle = oracle_theta(ds, mf, g0, a0, grid, h, kernel);

      LocalLinearCurve feasible;
      if (cfg.oracle_override) {
        feasible = oracle;
      } else {
        const FoldAssignment folds =
            make_folds(ds.n(), engine.folds, derive_seed(rep_seed, 0xf01dULL));
        const DebiasedOutcomes outcomes =
            construct_debiased_outcomes(ds, mf, folds, engine, rep_seed);
        feasible = fit_local_linear(outcomes.s_hat, ds.v(), grid, h, kernel);
      }
      if (oracle.flagged[static_cast<std::size_t>(center)] ||
          feasible.flagged[static_cast<std::size_t>(center)]) {
        return;  // leaves NaN; excluded from the medians below
      }
      dev[rep] = std::abs(feasible.theta_hat[center] - oracle.theta_hat[center]);
      tilde[rep] = oracle.theta_hat[center];
      hat[rep] = feasible.theta_hat[center];
      truth[rep] = spec.theta0(grid.row(center).transpose());
    });

    std::vector<double> dev_ok, tilde_ok;
    for (int rep = 0; rep < reps; ++rep) {
      const auto r = static_cast<std::size_t>(rep);
      if (std::isfinite(dev[r])) {
        dev_ok.push_back(dev[r]);
        tilde_ok.push_back(tilde[r]);
      }
      report.per_rep.push_back({n, rep, hat[r], tilde[r], truth[r]});
    }
    if (dev_ok.empty()) {
      throw StageError("equivalence", "all replications flagged at n = " + std::to_string(n));
    }
    EquivalenceRow row;
    row.n = n;
    row.bandwidth = h;
    row.delta = median_of(dev_ok);
    row.spread = interquartile_range(tilde_ok);
    row.ratio = row.spread > 0.0 ? row.delta / row.spread
                                 : (row.delta == 0.0 ? 0.0
                                                     : std::numeric_limits<double>::infinity());
    report.rows.push_back(row);
  }

  report.strictly_decreasing = report.rows.size() >= 2;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    report.strictly_decreasing =
        report.strictly_decreasing && report.rows[i].ratio < report.rows[i - 1].ratio;
  }
  return report;
}

struct OrthogonalityPerRep {
  int rep = 0;
  double eps = 0.0;
  double joint_max_dev = 0.0;
};

struct OrthogonalityReport {
  std::vector<double> eps_list;
  std::vector<OrthogonalityPerRep> per_rep;
  std::vector<double> joint_max_dev;   // per eps: max over V-decile bins of |mean deviation|
  std::vector<double> gamma_max_dev;
  std::vector<double> alpha_max_abs_z; // per eps: max over bins of |mean| / SE
  double joint_slope = 0.0;            // log-log slope of joint_max_dev on eps
  double gamma_slope = 0.0;
  bool alpha_within_3se = false;
  int bins = 10;
  Index n = 0;
  int reps = 0;
};

/// Directional Neyman-orthogonality diagnostic. Perturbs the oracle first
/// steps by eps times fixed smooth bounded directions, bins V into deciles to
/// approximate conditional means of the outcome deviation, and fits log-log
/// slopes: joint perturbations must decay quadratically, alpha-only
/// perturbations have exact conditional mean zero.
inline OrthogonalityReport check_orthogonality(const DgpSpec& spec, Index n,
                                               const std::vector<double>& eps_list, int reps,
                                               const SimConfig& cfg) {
  if (reps < 1) throw std::invalid_argument("check_orthogonality: reps must be positive");
  for (double e : eps_list) {
    if (e < 0.0) throw std::invalid_argument("check_orthogonality: eps must be nonnegative");
  }
  const int bins = 10;
  const std::size_t n_eps = eps_list.size();
  const MomentFunctional mf_template = spec.functional();

  // Fixed smooth bounded perturbation directions with E[dg * da | V] bounded
  // away from zero; the tanh(d) component keeps the m-channel active while
  // staying bounded for continuous treatments.
  auto d_gamma = [](const Eigen::Ref<const VectorXd>& x) {
    return 1.0 + 0.5 * std::cos(3.14159265358979323846 * x[1]) + 0.25 * std::tanh(x[0]);
  };
  auto d_alpha = [](const Eigen::Ref<const VectorXd>& x) {
    return 1.0 + 0.5 * std::sin(3.14159265358979323846 * x[2]);
  };

  enum Mode { kJoint = 0, kGammaOnly = 1, kAlphaOnly = 2 };
  // bin means per (rep, mode, eps, bin)
  std::vector<double> bin_means(static_cast<std::size_t>(reps) * 3 * n_eps * bins, 0.0);
  auto slot = [&](int rep, int mode, std::size_t ei, int b) -> double& {
    return bin_means[((static_cast<std::size_t>(rep) * 3 + mode) * n_eps + ei) * bins +
                     static_cast<std::size_t>(b)];
  };

  parallel_for(static_cast<std::size_t>(reps), cfg.threads, [&](std::size_t rep) {
    const std::uint64_t rep_seed = derive_seed(cfg.seed, 0x0b7a0000ULL + rep);
    const Dataset ds = spec.generate(n, rep_seed);
    MomentFunctional mf = mf_template;
    mf.bind(ds);

    // Decile bins of the first V coordinate.
    std::vector<double> v0(ds.v().col(0).data(), ds.v().col(0).data() + ds.n());
    std::sort(v0.begin(), v0.end());
    std::vector<double> edges;
    for (int b = 1; b < bins; ++b) {
      edges.push_back(quantile_sorted(v0, static_cast<double>(b) / bins));
    }
    auto bin_of = [&](double v) {
      int b = 0;
      while (b < bins - 1 && v > edges[static_cast<std::size_t>(b)]) ++b;
      return b;
    };

    auto g0 = [&](const Eigen::Ref<const VectorXd>& x) { return spec.gamma0(x); };
    auto a0 = [&](const Eigen::Ref<const VectorXd>& x) { return spec.alpha0(x); };

    VectorXd x;
    std::vector<Index> bin_count(static_cast<std::size_t>(bins), 0);
    std::vector<double> base(static_cast<std::size_t>(ds.n()));
    std::vector<int> bin_idx(static_cast<std::size_t>(ds.n()));
    for (Index i = 0; i < ds.n(); ++i) {
      ds.fill_x_row(i, x);
      base[static_cast<std::size_t>(i)] = mf.m(ds, i, g0) + a0(x) * mf.rho(ds, i, g0);
      bin_idx[static_cast<std::size_t>(i)] = bin_of(ds.v()(i, 0));
      ++bin_count[static_cast<std::size_t>(bin_idx[static_cast<std::size_t>(i)])];
    }

    for (std::size_t ei = 0; ei < n_eps; ++ei) {
      const double eps = eps_list[ei];
      for (int mode = 0; mode < 3; ++mode) {
        auto g_pert = [&](const Eigen::Ref<const VectorXd>& xr) {
          return g0(xr) + (mode == kAlphaOnly ? 0.0 : eps * d_gamma(xr));
        };
        auto a_pert = [&](const Eigen::Ref<const VectorXd>& xr) {
          return a0(xr) + (mode == kGammaOnly ? 0.0 : eps * d_alpha(xr));
        };
        for (Index i = 0; i < ds.n(); ++i) {
          ds.fill_x_row(i, x);
          const double pert = mf.m(ds, i, g_pert) + a_pert(x) * mf.rho(ds, i, g_pert);
          slot(static_cast<int>(rep), mode, ei, bin_idx[static_cast<std::size_t>(i)]) +=
              (pert - base[static_cast<std::size_t>(i)]) /
              static_cast<double>(bin_count[static_cast<std::size_t>(
                  bin_idx[static_cast<std::size_t>(i)])]);
        }
      }
    }
  });

  OrthogonalityReport report;
  report.eps_list = eps_list;
  report.bins = bins;
  report.n = n;
  report.reps = reps;
  report.alpha_within_3se = true;

  for (int rep = 0; rep < reps; ++rep) {
    for (std::size_t ei = 0; ei < n_eps; ++ei) {
      double jm = 0.0;
      for (int b = 0; b < bins; ++b) jm = std::max(jm, std::abs(slot(rep, kJoint, ei, b)));
      report.per_rep.push_back({rep, eps_list[ei], jm});
    }
  }

  std::vector<double> log_eps, log_joint, log_gamma;
  for (std::size_t ei = 0; ei < n_eps; ++ei) {
    double joint_max = 0.0, gamma_max = 0.0, alpha_max_z = 0.0;
    for (int b = 0; b < bins; ++b) {
      for (int mode = 0; mode < 3; ++mode) {
        std::vector<double> vals;
        vals.reserve(static_cast<std::size_t>(reps));
        for (int rep = 0; rep < reps; ++rep) vals.push_back(slot(rep, mode, ei, b));
        const double m = mean_of(vals);
        const double se = reps > 1 ? stddev_of(vals) / std::sqrt(static_cast<double>(reps)) : 0.0;
        if (mode == kJoint) joint_max = std::max(joint_max, std::abs(m));
        if (mode == kGammaOnly) gamma_max = std::max(gamma_max, std::abs(m));
        if (mode == kAlphaOnly) {
          const double z = se > 0.0 ? std::abs(m) / se : (m == 0.0 ? 0.0 : 1e300);
          alpha_max_z = std::max(alpha_max_z, z);
        }
      }
    }
    report.joint_max_dev.push_back(joint_max);
    report.gamma_max_dev.push_back(gamma_max);
    report.alpha_max_abs_z.push_back(alpha_max_z);
    if (eps_list[ei] > 0.0 && joint_max > 0.0) {
      log_eps.push_back(std::log(eps_list[ei]));
      log_joint.push_back(std::log(joint_max));
      log_gamma.push_back(std::log(std::max(gamma_max, 1e-300)));
    }
    report.alpha_within_3se = report.alpha_within_3se && alpha_max_z <= 3.0;
  }
  if (log_eps.size() >= 2) {
    report.joint_slope = ols_slope(log_eps, log_joint);
    report.gamma_slope = ols_slope(log_eps, log_gamma);
  }
  return report;
}

struct RateRow {
  Index n = 0;
  double rms_gamma = 0.0;
  double rms_alpha = 0.0;
  double bandwidth = 0.0;
  double gamma_ratio = 0.0;    // rms_gamma / h^{r/2}
  double alpha_ratio = 0.0;
  double product_ratio = 0.0;  // sqrt(n) rms_gamma rms_alpha / h^{r/2}
};

struct RatePerRep {
  Index n = 0;
  int rep = 0;
  double rms_gamma = 0.0;
  double rms_alpha = 0.0;
};

struct RateReport {
  std::vector<RateRow> rows;
  std::vector<RatePerRep> per_rep;
  double gamma_slope = 0.0;  // log-log slope of median rms_gamma on n
  double alpha_slope = 0.0;
  bool product_flagged = false;
  int r = 1;
  int d = 2;
  std::string smoothness_note;
};

/// Out-of-sample convergence-rate diagnostic for the first-step learners
/// against the DGP oracles, with the combined-rate ratios the asymptotics
/// lean on.
inline RateReport check_rates(const DgpSpec& spec, const std::vector<Index>& n_list, int reps,
                              const SimConfig& cfg) {
  if (reps < 1) throw std::invalid_argument("check_rates: reps must be positive");
  const MomentFunctional mf_template = spec.functional();
  const EngineConfig engine = cfg.engine.value_or(spec.engine_config());

  RateReport report;
  report.r = spec.v_dim;
  report.d = spec.z_dim;
  if (spec.v_dim == 1) {
    // With r = 1 and optimal learners, the combined-rate requirement needs
    // roughly s > 3d/4 derivatives of the first-step functions.
    report.smoothness_note =
        "r = 1: combined rate condition needs smoothness s > 3d/4 with d = " +
        std::to_string(spec.z_dim);
  }

  std::vector<double> log_n, log_g, log_a;
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    const Index n = n_list[ni];
    std::vector<double> rg(static_cast<std::size_t>(reps), 0.0);
    std::vector<double> ra(static_cast<std::size_t>(reps), 0.0);

    parallel_for(static_cast<std::size_t>(reps), cfg.threads, [&](std::size_t rep) {
      const std::uint64_t rep_seed =
          derive_seed(derive_seed(cfg.seed, 0xa7e50000ULL + ni), rep);
      const Dataset train = spec.generate(n, rep_seed);
      MomentFunctional mf = mf_template;
      mf.bind(train);
      std::vector<Index> rows(static_cast<std::size_t>(train.n()));
      std::iota(rows.begin(), rows.end(), Index{0});

      auto gamma_dict = build_dictionary(engine.gamma_dictionary, train, rows);
      FittedFunction gamma_fit;
      bool gamma_frozen = cfg.frozen_gamma_constant.has_value();
      if (!gamma_frozen) {
        gamma_fit = fit_learner(train, rows, gamma_dict, mf.gamma_target(), engine.learner,
                                rep_seed);
      }
      auto gamma_hat = [&](const Eigen::Ref<const VectorXd>& xr) {
        return gamma_frozen ? *cfg.frozen_gamma_constant : gamma_fit.predict(xr);
      };

      const DictionaryConfig alpha_cfg =
          engine.alpha_dictionary.value_or(default_alpha_dictionary(engine.gamma_dictionary));
      auto alpha_dict = build_dictionary(alpha_cfg, train, rows);
      RieszEstimate alpha_hat;
      if (engine.riesz.method == RieszMethod::AutoWeighted || !mf.mean_type()) {
        VectorXd w;
        if (mf.mean_type()) {
          w = VectorXd::Ones(train.n());
        } else {
          w = quantile_residual_weights(train, rows, gamma_hat);
        }
        alpha_hat = fit_auto_riesz_weighted(train, rows, mf, w, alpha_dict, engine.riesz.lambda,
                                            engine.riesz.options);
      } else {
        alpha_hat = fit_auto_riesz(train, rows, mf, alpha_dict, engine.riesz.lambda,
                                   engine.riesz.options);
      }

      const Dataset eval = spec.generate(cfg.rate_eval_size, derive_seed(rep_seed, 0xeea1ULL));
      double sg = 0.0, sa = 0.0;
      VectorXd x;
      for (Index i = 0; i < eval.n(); ++i) {
        eval.fill_x_row(i, x);
        const double eg = gamma_hat(x) - spec.gamma0(x);
        const double ea = alpha_hat(x) - spec.alpha0(x);
        sg += eg * eg;
        sa += ea * ea;
      }
      rg[rep] = std::sqrt(sg / static_cast<double>(eval.n()));
      ra[rep] = std::sqrt(sa / static_cast<double>(eval.n()));
    });

    for (int rep = 0; rep < reps; ++rep) {
      report.per_rep.push_back({n, rep, rg[static_cast<std::size_t>(rep)],
                                ra[static_cast<std::size_t>(rep)]});
    }
    RateRow row;
    row.n = n;
    row.rms_gamma = median_of(rg);
    row.rms_alpha = median_of(ra);
    row.bandwidth = rate_bandwidth(spec, n, cfg);
    const double hr2 = std::pow(row.bandwidth, static_cast<double>(spec.v_dim) / 2.0);
    row.gamma_ratio = row.rms_gamma / hr2;
    row.alpha_ratio = row.rms_alpha / hr2;
    row.product_ratio =
        std::sqrt(static_cast<double>(n)) * row.rms_gamma * row.rms_alpha / hr2;
    report.rows.push_back(row);
    log_n.push_back(std::log(static_cast<double>(n)));
    log_g.push_back(std::log(std::max(row.rms_gamma, 1e-300)));
    log_a.push_back(std::log(std::max(row.rms_alpha, 1e-300)));
  }

  if (log_n.size() >= 2) {
    report.gamma_slope = ols_slope(log_n, log_g);
    report.alpha_slope = ols_slope(log_n, log_a);
  }
  // Flag the combined-rate requirement when the ratio trends upward or ends
  // above one.
  bool increasing = report.rows.size() >= 2;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    increasing = increasing && report.rows[i].product_ratio > report.rows[i - 1].product_ratio;
  }
  const bool level = !report.rows.empty() && report.rows.back().product_ratio > 1.0;
  report.product_flagged = increasing || level;
  return report;
}

struct CoveragePerRep {
  int rep = 0;
  bool valid = false;
  double dev = 0.0;
  double se = 0.0;
  bool covered = false;
  double plugin_dev = 0.0;
  bool plugin_covered = false;
};

struct CoverageReport {
  Index n = 0;
  int reps = 0;
  double bandwidth = 0.0;
  double coverage_central = 0.0;
  double coverage_interior = 0.0;  // mean over interior grid points
  double bias_central = 0.0;       // mean(theta_hat - theta0) at the center
  double se_median = 0.0;
  int valid_reps = 0;
  // Paired plug-in run (correction term off), when requested.
  bool paired = false;
  double plugin_coverage_central = 0.0;
  double plugin_bias_central = 0.0;
  std::vector<CoveragePerRep> per_rep;
};

/// Pointwise 95% interval coverage of theta0 at the central grid point (and
/// averaged over interior points) under undersmoothed bandwidths. With
/// paired_plugin set, the plug-in curve (no correction term) is scored on the
/// identical replications.
inline CoverageReport check_coverage(const DgpSpec& spec, Index n, int reps,
                                     const SimConfig& cfg) {
  if (reps < 1) throw std::invalid_argument("check_coverage: reps must be positive");
  const MomentFunctional mf_template = spec.functional();
  const EngineConfig engine = cfg.engine.value_or(spec.engine_config());
  const Kernel kernel{cfg.kernel};
  const double h = rate_bandwidth(spec, n, cfg);

  struct RepResult {
    bool valid = false;
    bool covered = false;
    double dev = 0.0;
    double se = 0.0;
    double interior_cov = 0.0;
    bool plugin_covered = false;
    double plugin_dev = 0.0;
  };
  std::vector<RepResult> results(static_cast<std::size_t>(reps));

  parallel_for(static_cast<std::size_t>(reps), cfg.threads, [&](std::size_t rep) {
    const std::uint64_t rep_seed = derive_seed(cfg.seed, 0xc0e70000ULL + rep);
    const Dataset ds = spec.generate(n, rep_seed);
    MomentFunctional mf = mf_template;
    mf.bind(ds);
    const FoldAssignment folds = make_folds(ds.n(), engine.folds, derive_seed(rep_seed, 0xf01dULL));
    const DebiasedOutcomes outcomes = construct_debiased_outcomes(ds, mf, folds, engine, rep_seed);
    const MatrixXd grid = default_grid(ds.v(), cfg.grid_points);
    const Index center = detail::central_grid_index(grid);

    const LocalLinearCurve curve = fit_local_linear(outcomes.s_hat, ds.v(), grid, h, kernel);
    RepResult r;
    if (curve.flagged[static_cast<std::size_t>(center)]) {
      results[rep] = r;
      return;
    }
    r.valid = true;
    const double truth_c = spec.theta0(grid.row(center).transpose());
    r.dev = curve.theta_hat[center] - truth_c;
    r.se = curve.se[center];
    // The 1e-12 slack only matters in the degenerate noiseless case, where
    // both the error and the interval width collapse to machine roundoff.
    r.covered = std::abs(r.dev) <= 1.96 * r.se + 1e-12;

    Index interior_total = 0, interior_cov = 0;
    const Index margin = grid.rows() / 10;
    for (Index g = margin; g < grid.rows() - margin; ++g) {
      if (curve.flagged[static_cast<std::size_t>(g)]) continue;
      const double t = spec.theta0(grid.row(g).transpose());
      ++interior_total;
      interior_cov += std::abs(curve.theta_hat[g] - t) <= 1.96 * curve.se[g] + 1e-12 ? 1 : 0;
    }
    r.interior_cov = interior_total > 0
                         ? static_cast<double>(interior_cov) / static_cast<double>(interior_total)
                         : 0.0;

    if (cfg.paired_plugin) {
      const LocalLinearCurve plug = fit_local_linear(outcomes.m_part, ds.v(), grid, h, kernel);
      if (!plug.flagged[static_cast<std::size_t>(center)]) {
        r.plugin_dev = plug.theta_hat[center] - truth_c;
        r.plugin_covered = std::abs(r.plugin_dev) <= 1.96 * plug.se[center] + 1e-12;
      }
    }
    results[rep] = r;
  });

  CoverageReport report;
  report.n = n;
  report.reps = reps;
  report.bandwidth = h;
  report.paired = cfg.paired_plugin;
  std::vector<double> ses, devs, plugin_devs;
  int covered = 0, plugin_covered = 0;
  double interior_acc = 0.0;
  for (std::size_t rep = 0; rep < results.size(); ++rep) {
    const auto& r = results[rep];
    report.per_rep.push_back({static_cast<int>(rep), r.valid, r.dev, r.se, r.covered,
                              r.plugin_dev, r.plugin_covered});
    if (!r.valid) continue;
    ++report.valid_reps;
    covered += r.covered ? 1 : 0;
    plugin_covered += r.plugin_covered ? 1 : 0;
    interior_acc += r.interior_cov;
    ses.push_back(r.se);
    devs.push_back(r.dev);
    plugin_devs.push_back(r.plugin_dev);
  }
  if (report.valid_reps == 0) throw StageError("coverage", "all replications flagged");
  const double denom = static_cast<double>(report.valid_reps);
  report.coverage_central = covered / denom;
  report.coverage_interior = interior_acc / denom;
  report.bias_central = mean_of(devs);
  report.se_median = median_of(ses);
  if (cfg.paired_plugin) {
    report.plugin_coverage_central = plugin_covered / denom;
    report.plugin_bias_central = mean_of(plugin_devs);
  }
  return report;
}

// ---------------------------------------------------------------------------
// One-time self-consistency validations of the shipped oracles.

/// Monte Carlo check that E[m(W, gamma0) | V-bin] matches theta0 within
/// 3 standard errors in every decile bin. Returns the max |z| over bins.
inline double validate_dgp_theta(const DgpSpec& spec, Index draws, std::uint64_t seed) {
  const Dataset ds = spec.generate(draws, seed);
  MomentFunctional mf = spec.functional();
  mf.bind(ds);
  auto g0 = [&](const Eigen::Ref<const VectorXd>& x) { return spec.gamma0(x); };

  const int bins = 10;
  std::vector<double> v0(ds.v().col(0).data(), ds.v().col(0).data() + ds.n());
  std::sort(v0.begin(), v0.end());
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b) {
    edges.push_back(quantile_sorted(v0, static_cast<double>(b) / bins));
  }
  std::vector<double> sum(bins, 0.0), sum2(bins, 0.0), vsum(bins, 0.0);
  std::vector<Index> count(bins, 0);
  for (Index i = 0; i < ds.n(); ++i) {
    int b = 0;
    while (b < bins - 1 && ds.v()(i, 0) > edges[static_cast<std::size_t>(b)]) ++b;
    const double m = mf.m(ds, i, g0);
    sum[static_cast<std::size_t>(b)] += m;
    sum2[static_cast<std::size_t>(b)] += m * m;
    vsum[static_cast<std::size_t>(b)] += ds.v()(i, 0);
    ++count[static_cast<std::size_t>(b)];
  }
  double max_z = 0.0;
  for (int b = 0; b < bins; ++b) {
    const auto c = static_cast<double>(count[static_cast<std::size_t>(b)]);
    if (c < 2) continue;
    const double mean = sum[static_cast<std::size_t>(b)] / c;
    const double var =
        std::max(0.0, sum2[static_cast<std::size_t>(b)] / c - mean * mean) * c / (c - 1.0);
    VectorXd vbar(1);
    vbar[0] = vsum[static_cast<std::size_t>(b)] / c;
    const double target = spec.theta0(vbar);
    const double se = std::sqrt(var / c);
    if (se > 0.0) max_z = std::max(max_z, std::abs(mean - target) / se);
  }
  return max_z;
}

/// Monte Carlo check of the representer identity E[m(W, phi)] = E[alpha0 phi]
/// over a battery of test functions; returns the max |z| over the battery.
inline double validate_dgp_representer(const DgpSpec& spec, Index draws, std::uint64_t seed) {
  const Dataset ds = spec.generate(draws, seed);
  MomentFunctional mf = spec.functional();
  mf.bind(ds);
  auto a0 = [&](const Eigen::Ref<const VectorXd>& x) { return spec.alpha0(x); };

  std::vector<std::function<double(const Eigen::Ref<const VectorXd>&)>> battery = {
      [](const Eigen::Ref<const VectorXd>&) { return 1.0; },
      [](const Eigen::Ref<const VectorXd>& x) { return x[1]; },
      [](const Eigen::Ref<const VectorXd>& x) { return x[2]; },
      [](const Eigen::Ref<const VectorXd>& x) { return x[1] * x[1]; },
      [](const Eigen::Ref<const VectorXd>& x) { return x[0] * x[1]; },
      [](const Eigen::Ref<const VectorXd>& x) { return std::sin(3.14159265358979323846 * x[1]); },
  };

  // For the quantile design the identity holds in the v_rho-weighted metric:
  // E[m(W, phi)] = E[-alpha0 v_rho phi] with v_rho > 0.
  const bool weighted = !mf.mean_type();
  double max_z = 0.0;
  VectorXd x;
  for (const auto& phi : battery) {
    double s = 0.0, s2 = 0.0;
    for (Index i = 0; i < ds.n(); ++i) {
      ds.fill_x_row(i, x);
      const double lhs = mf.m(ds, i, phi);
      const double rhs = weighted ? -a0(x) * spec.vrho0(x) * phi(x) : a0(x) * phi(x);
      const double t = lhs - rhs;
      s += t;
      s2 += t * t;
    }
    const auto c = static_cast<double>(ds.n());
    const double mean = s / c;
    const double var = std::max(0.0, s2 / c - mean * mean) * c / (c - 1.0);
    const double se = std::sqrt(var / c);
    if (se > 0.0) max_z = std::max(max_z, std::abs(mean) / se);
  }
  return max_z;
}

}  // namespace condml
