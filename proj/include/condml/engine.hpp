#pragma once

#include "condml/common.hpp"
#include "condml/dataset.hpp"
#include "condml/dictionary.hpp"
#include "condml/folds.hpp"
#include "condml/learners.hpp"
#include "condml/llreg.hpp"
#include "condml/moments.hpp"
#include "condml/riesz.hpp"
#include "condml/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace condml {

/// Error raised by the estimation pipeline, labeled with the stage it broke in.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RieszConfig {
  RieszMethod method = RieszMethod::Auto;
  double lambda = 0.0;
  double density_floor = 1e-3;
  RieszOptions options;
};

struct EngineConfig {
  LearnerConfig learner;
  DictionaryConfig gamma_dictionary;
  // Default alpha dictionary: the gamma dictionary plus treatment-interaction
  // terms, so the two fits share a Gram structure.
  std::optional<DictionaryConfig> alpha_dictionary;
  RieszConfig riesz;
  int folds = 5;
  bool alpha_off = false;  // switch the correction term off (plug-in estimator)
};

struct LlrConfig {
  std::optional<double> h;         // fixed bandwidth; unset -> leave-one-out CV
  std::vector<double> h_grid;      // CV candidates; empty -> rule-of-thumb ladder
  double undersmooth = 0.8;        // applied to the CV winner only
  int grid_points = 41;
  KernelFamily kernel = KernelFamily::Epanechnikov;
  std::optional<MatrixXd> grid;    // explicit evaluation grid override
  LlrOptions options;
};

struct FoldDiagnostics {
  int fold = 0;
  Index train_size = 0;
  double gamma_lambda = 0.0;
  double gamma_heldout_loss = 0.0;        // MSE (mean) or mean check loss (quantile)
  double alpha_moment_residual_max = 0.0; // empirical representer residual, inf-norm
};

/// Per-observation debiased outcomes with fold provenance. s_hat decomposes
/// exactly into the identifying part m(W_i, gamma_hat) and the correction
/// alpha_hat(X_i) * rho(W_i, gamma_hat), each computed from learners fitted
/// without the observation's own fold.
struct DebiasedOutcomes {
  VectorXd s_hat;
  VectorXd m_part;
  VectorXd correction_part;
  std::vector<int> fold_of;
  std::vector<FoldDiagnostics> fold_diagnostics;
};

struct EstimationReport {
  LocalLinearCurve curve;
  std::vector<FoldDiagnostics> fold_diagnostics;
  double h_cv = std::numeric_limits<double>::quiet_NaN();  // NaN when bandwidth was fixed
  double h_used = 0.0;
  std::uint64_t seed = 0;
};

inline DictionaryConfig default_alpha_dictionary(const DictionaryConfig& gamma_cfg) {
  DictionaryConfig cfg = gamma_cfg;
  cfg.treatment = true;
  cfg.treat_interactions = true;
  return cfg;
}

namespace detail {

inline double heldout_gamma_loss(const Dataset& ds, const std::vector<Index>& rows,
                                 const FittedFunction& gamma, const GammaTarget& target) {
  double acc = 0.0;
  VectorXd x;
  for (Index i : rows) {
    ds.fill_x_row(i, x);
    const double e = ds.y()[i] - gamma.predict(x);
    acc += target.kind == TargetKind::Quantile ? detail::check_loss(e, target.nu) : e * e;
  }
  return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
}

inline RieszEstimate fit_fold_alpha(const Dataset& ds, const std::vector<Index>& train,
                                    const MomentFunctional& mf, const EngineConfig& cfg,
                                    const std::shared_ptr<const Dictionary>& alpha_dict,
                                    const FittedFunction& gamma_hat, std::uint64_t seed) {
  switch (cfg.riesz.method) {
    case RieszMethod::Auto:
      if (!mf.mean_type()) {
        throw std::invalid_argument(
            "riesz method 'auto' targets the wrong sign for quantile-type residuals; "
            "use 'auto-weighted' instead");
      }
      return fit_auto_riesz(ds, train, mf, alpha_dict, cfg.riesz.lambda, cfg.riesz.options);
    case RieszMethod::AutoWeighted: {
      VectorXd w;
      if (mf.mean_type()) {
        w = VectorXd::Ones(static_cast<Index>(train.size()));
      } else {
        w = quantile_residual_weights(ds, train, gamma_hat);
      }
      return fit_auto_riesz_weighted(ds, train, mf, w, alpha_dict, cfg.riesz.lambda,
                                     cfg.riesz.options);
    }
    case RieszMethod::Plugin: {
      PluginNuisances nuis;
      nuis.density_floor = cfg.riesz.density_floor;
      // Nuisance features are z-only terms of the gamma dictionary.
      DictionaryConfig zcfg = cfg.gamma_dictionary;
      zcfg.treatment = false;
      zcfg.treat_interactions = false;
      auto zdict = build_dictionary(zcfg, ds, train);
      if (mf.kind() == MomentFunctional::Kind::CateBinary) {
        LearnerConfig pcfg = cfg.learner;
        pcfg.method = LearnerMethod::Logistic;
        nuis.propensity =
            fit_learner(ds, train, zdict, GammaTarget::propensity(), pcfg, seed);
      } else {
        MatrixXd phi = zdict->features(ds, train);
        VectorXd d_train(static_cast<Index>(train.size()));
        for (std::size_t i = 0; i < train.size(); ++i) d_train[static_cast<Index>(i)] = ds.d()[train[i]];
        VectorXd b = ridge_solve(phi, d_train, cfg.learner.lambda.value_or(1e-8),
                                 zdict->unpenalized_indices());
        FittedFunction mean_fit(zdict, std::move(b), GammaTarget::mean());
        double ss = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
          const double e = d_train[static_cast<Index>(i)] -
                           mean_fit.predict_features(phi.row(static_cast<Index>(i)).transpose());
          ss += e * e;
        }
        GaussianTreatmentModel model{std::move(mean_fit),
                                     std::max(ss / static_cast<double>(train.size()), 1e-8)};
        if (mf.kind() == MomentFunctional::Kind::EvBound) {
          nuis.price_density = PluginNuisances::from_gaussian(std::move(model));
        } else {
          nuis.treatment_model = std::move(model);
        }
      }
      return plugin_alpha(mf, nuis);
    }
  }
  throw std::invalid_argument("unknown riesz method");
}

}  // namespace detail

/// Cross-fitted debiased outcomes: for each fold the first-step learners are
/// fitted on the complement, then evaluated on the fold's own observations.
inline DebiasedOutcomes construct_debiased_outcomes(const Dataset& ds, const MomentFunctional& mf,
                                                    const FoldAssignment& folds,
                                                    const EngineConfig& cfg,
                                                    std::uint64_t seed = 0) {
  const Index n = ds.n();
  if (folds.n != n) throw std::invalid_argument("fold assignment does not match dataset");

  DebiasedOutcomes out;
  out.s_hat.resize(n);
  out.m_part.resize(n);
  out.correction_part.resize(n);
  out.fold_of = folds.fold_of;
  out.fold_diagnostics.resize(static_cast<std::size_t>(folds.num_folds));

  const DictionaryConfig alpha_cfg =
      cfg.alpha_dictionary.value_or(default_alpha_dictionary(cfg.gamma_dictionary));

  for (int fold = 0; fold < folds.num_folds; ++fold) {
    const auto train = folds.complement_indices(fold);
    const auto eval_rows = folds.fold_indices(fold);
    const std::uint64_t fold_seed = derive_seed(seed, 0xf01d0000ULL + static_cast<std::uint64_t>(fold));
    try {
      auto gamma_dict = build_dictionary(cfg.gamma_dictionary, ds, train);
      FoldDiagnostics diag;
      diag.fold = fold;
      diag.train_size = static_cast<Index>(train.size());
      const FittedFunction gamma_hat = fit_learner(ds, train, gamma_dict, mf.gamma_target(),
                                                   cfg.learner, fold_seed, &diag.gamma_lambda);
      diag.gamma_heldout_loss = detail::heldout_gamma_loss(ds, eval_rows, gamma_hat,
                                                           mf.gamma_target());

      std::optional<RieszEstimate> alpha_hat;
      if (!cfg.alpha_off) {
        auto alpha_dict = build_dictionary(alpha_cfg, ds, train);
        alpha_hat = detail::fit_fold_alpha(ds, train, mf, cfg, alpha_dict, gamma_hat, fold_seed);
        auto alpha_eval = [&](const Eigen::Ref<const VectorXd>& x) { return (*alpha_hat)(x); };
        diag.alpha_moment_residual_max =
            representer_residuals(ds, train, mf, alpha_eval, *alpha_dict)
                .lpNorm<Eigen::Infinity>();
      } else {
        diag.alpha_moment_residual_max = std::numeric_limits<double>::quiet_NaN();
      }

      VectorXd x;
      for (Index i : eval_rows) {
        const double m_val = mf.m(ds, i, gamma_hat);
        double corr = 0.0;
        if (alpha_hat) {
          ds.fill_x_row(i, x);
          corr = (*alpha_hat)(x)*mf.rho(ds, i, gamma_hat);
        }
        out.m_part[i] = m_val;
        out.correction_part[i] = corr;
        out.s_hat[i] = m_val + corr;
      }
      out.fold_diagnostics[static_cast<std::size_t>(fold)] = diag;
    } catch (const std::exception& e) {
      throw StageError("debiased-outcomes",
                       "fold " + std::to_string(fold) + " failed: " + e.what());
    }
  }
  return out;
}

/// End-to-end pipeline: folds -> debiased outcomes -> bandwidth (CV on the
/// debiased outcomes unless fixed) -> locally linear curve with pointwise
/// standard errors.
inline EstimationReport estimate_theta(const Dataset& ds, MomentFunctional mf,
                                       const EngineConfig& cfg, const LlrConfig& llr,
                                       std::uint64_t seed) {
  mf.bind(ds);
  FoldAssignment folds;
  try {
    folds = make_folds(ds.n(), cfg.folds, derive_seed(seed, 0x6b666f6cULL));
  } catch (const std::invalid_argument& e) {
    // bad fold count relative to the data is an input problem, not a
    // numerical one; keep the stage label on the message
    throw std::invalid_argument("stage folds: " + std::string(e.what()));
  }

  const DebiasedOutcomes outcomes = construct_debiased_outcomes(ds, mf, folds, cfg, seed);

  EstimationReport report;
  report.seed = seed;
  report.fold_diagnostics = outcomes.fold_diagnostics;

  const Kernel kernel{llr.kernel};
  double h_used;
  if (llr.h) {
    h_used = *llr.h;
    if (!(h_used > 0.0)) throw StageError("bandwidth", "configured bandwidth must be positive");
  } else {
    try {
      const auto candidates =
          llr.h_grid.empty() ? default_bandwidth_grid(ds.v()) : llr.h_grid;
      h_used = select_bandwidth(outcomes.s_hat, ds.v(), kernel, candidates, llr.undersmooth,
                                llr.options, &report.h_cv);
    } catch (const NoValidBandwidthError& e) {
      throw StageError("bandwidth", e.what());
    }
  }
  report.h_used = h_used;

  try {
    const MatrixXd grid = llr.grid ? *llr.grid : default_grid(ds.v(), llr.grid_points);
    report.curve = fit_local_linear(outcomes.s_hat, ds.v(), grid, h_used, kernel, llr.options);
  } catch (const std::exception& e) {
    throw StageError("local-linear", e.what());
  }
  return report;
}

/// Infeasible benchmark: the same local regression applied to outcomes built
/// from supplied oracle functions for gamma and alpha.
template <class GammaFn, class AlphaFn>
LocalLinearCurve oracle_theta(const Dataset& ds, const MomentFunctional& mf, GammaFn&& gamma0,
                              AlphaFn&& alpha0, const MatrixXd& grid, double h,
                              const Kernel& kernel, const LlrOptions& opts = {}) {
  const Index n = ds.n();
  VectorXd s(n);
  VectorXd x;
  for (Index i = 0; i < n; ++i) {
    ds.fill_x_row(i, x);
    s[i] = mf.m(ds, i, gamma0) + alpha0(x) * mf.rho(ds, i, gamma0);
  }
  return fit_local_linear(s, ds.v(), grid, h, kernel, opts);
}

}  // namespace condml
