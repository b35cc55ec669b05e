#pragma once

#include "condml/common.hpp"
#include "condml/dataset.hpp"
#include "condml/dictionary.hpp"
#include "condml/learners.hpp"
#include "condml/moments.hpp"
#include "condml/rng.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace condml {

enum class RieszMethod { Auto, AutoWeighted, Plugin };

inline std::string riesz_method_name(RieszMethod m) {
  switch (m) {
    case RieszMethod::Auto: return "auto";
    case RieszMethod::AutoWeighted: return "auto-weighted";
    case RieszMethod::Plugin: return "plugin";
  }
  return "unknown";
}

inline RieszMethod riesz_method_from_name(const std::string& name) {
  if (name == "auto") return RieszMethod::Auto;
  if (name == "auto-weighted" || name == "auto_weighted") return RieszMethod::AutoWeighted;
  if (name == "plugin") return RieszMethod::Plugin;
  throw std::invalid_argument("unknown riesz method: " + name);
}

/// Estimated conditional Riesz representer. The automatic methods carry the
/// linear representation over the dictionary; the plugin method carries a
/// closed-form evaluator.
struct RieszEstimate {
  RieszMethod method = RieszMethod::Auto;
  double lambda = 0.0;
  std::optional<FittedFunction> fitted;
  std::function<double(const Eigen::Ref<const VectorXd>&)> alpha_fn;

  double operator()(const Eigen::Ref<const VectorXd>& x) const {
    if (fitted) return fitted->predict(x);
    return alpha_fn(x);
  }
};

struct RieszOptions {
  double tol = 1e-11;          // coordinate-descent convergence on max update
  int max_sweeps = 100000;
  double min_eigenvalue = 1e-10;  // weighted Gram positivity threshold
};

namespace detail {

// Soft-threshold coordinate descent for 0.5 b'G b - rhs'b + lambda |b|_1
// (gradient form of the sample Riesz objective; every coefficient penalized).
inline VectorXd riesz_coordinate_descent(const MatrixXd& gram, const VectorXd& rhs, double lambda,
                                         const RieszOptions& opts) {
  const Index k = gram.cols();
  VectorXd b = VectorXd::Zero(k);
  VectorXd gb = VectorXd::Zero(k);  // gram * b, maintained incrementally
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < k; ++j) {
      const double gjj = gram(j, j);
      if (gjj <= 0.0) continue;
      const double zj = rhs[j] - gb[j] + gjj * b[j];
      const double bj = soft_threshold(zj, lambda) / gjj;
      const double delta = bj - b[j];
      if (delta != 0.0) {
        gb += delta * gram.col(j);
        b[j] = bj;
      }
      max_change = std::max(max_change, std::abs(delta));
    }
    if (max_change < opts.tol) return b;
  }
  throw ConvergenceError("riesz coordinate descent did not converge", b);
}

// M_hat_j = (1/n) sum_i m(W_i, phi_j) over the given rows.
template <class MF>
VectorXd moment_vector(const Dataset& ds, const std::vector<Index>& rows, const MF& mf,
                       const Dictionary& dict) {
  const Index k = dict.size();
  VectorXd mhat = VectorXd::Zero(k);
  for (Index j = 0; j < k; ++j) {
    auto basis = [&](const Eigen::Ref<const VectorXd>& x) { return dict.eval(j, x); };
    double acc = 0.0;
    for (Index i : rows) acc += mf.m(ds, i, basis);
    mhat[j] = acc / static_cast<double>(rows.size());
  }
  return mhat;
}

inline VectorXd solve_or_advise(const MatrixXd& gram, const VectorXd& rhs) {
  Eigen::FullPivLU<MatrixXd> lu(gram);
  if (lu.rank() < gram.cols()) {
    throw SingularSystemError(
        "riesz Gram matrix is singular at lambda = 0; use lambda > 0 or a smaller dictionary");
  }
  return lu.solve(rhs);
}

}  // namespace detail

/// Automatic Riesz regression for mean-type residuals: minimizes
///   (1/n) sum_i [-2 m(W_i, phi'b) + (phi(X_i)'b)^2] + 2 lambda |b|_1,
/// whose first-order conditions at lambda = 0 are G b = M_hat with
/// G = (1/n) sum phi phi' and M_hat_j = (1/n) sum m(W_i, phi_j).
template <class MF>
RieszEstimate fit_auto_riesz(const Dataset& ds, const std::vector<Index>& rows, const MF& mf,
                             const std::shared_ptr<const Dictionary>& dict, double lambda,
                             const RieszOptions& opts = {}) {
  if (rows.empty()) throw std::invalid_argument("fit_auto_riesz: no training rows");
  if (lambda < 0.0) throw std::invalid_argument("fit_auto_riesz: lambda must be nonnegative");
  const MatrixXd phi = dict->features(ds, rows);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  const MatrixXd gram = phi.transpose() * phi * inv_n;
  const VectorXd mhat = detail::moment_vector(ds, rows, mf, *dict);

  VectorXd b = lambda == 0.0 ? detail::solve_or_advise(gram, mhat)
                             : detail::riesz_coordinate_descent(gram, mhat, lambda, opts);
  RieszEstimate est;
  est.method = RieszMethod::Auto;
  est.lambda = lambda;
  est.fitted = FittedFunction(dict, std::move(b), GammaTarget::mean());
  return est;
}

/// Weighted automatic Riesz regression for generalized residuals. With
/// weights w_i = |v_rho(W_i)| the fitted coefficients solve
///   G_w b = -sign(v_rho) M_hat  (+ soft-thresholding when lambda > 0),
/// so that alpha_hat targets alpha_0 = -v_m / v_rho under either sign
/// convention: for mean residuals (v_rho = -1) this is exactly the
/// unweighted system above, and for quantile residuals (v_rho > 0) the
/// right-hand side flips. Unit weights therefore reduce to fit_auto_riesz.
template <class MF>
RieszEstimate fit_auto_riesz_weighted(const Dataset& ds, const std::vector<Index>& rows,
                                      const MF& mf, const VectorXd& vrho,
                                      const std::shared_ptr<const Dictionary>& dict, double lambda,
                                      const RieszOptions& opts = {}) {
  if (rows.empty()) throw std::invalid_argument("fit_auto_riesz_weighted: no training rows");
  if (lambda < 0.0) throw std::invalid_argument("fit_auto_riesz_weighted: lambda nonnegative");
  if (vrho.size() != static_cast<Index>(rows.size())) {
    throw std::invalid_argument("fit_auto_riesz_weighted: weight length must match rows");
  }
  const MatrixXd phi = dict->features(ds, rows);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  const VectorXd w = vrho.cwiseAbs();
  const MatrixXd gram = phi.transpose() * w.asDiagonal() * phi * inv_n;

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram);
  if (es.eigenvalues().minCoeff() < opts.min_eigenvalue) {
    throw IllPosedError("weighted riesz Gram is not positive definite (min eigenvalue below " +
                        std::to_string(opts.min_eigenvalue) + ")");
  }

  const VectorXd mhat = detail::moment_vector(ds, rows, mf, *dict);
  const VectorXd rhs = -mf.rho_slope_sign() * mhat;

  VectorXd b = lambda == 0.0 ? detail::solve_or_advise(gram, rhs)
                             : detail::riesz_coordinate_descent(gram, rhs, lambda, opts);
  RieszEstimate est;
  est.method = RieszMethod::AutoWeighted;
  est.lambda = lambda;
  est.fitted = FittedFunction(dict, std::move(b), GammaTarget::mean());
  return est;
}

/// Kernel-density weight proxy for quantile residuals:
/// v_rho_hat(W_i) = (1/b) k((y_i - gamma_hat(x_i)) / b) with a Silverman-rule
/// bandwidth on the residuals, so E[v_rho_hat | X] approximates the
/// conditional outcome density at the fitted quantile.
template <class F>
VectorXd quantile_residual_weights(const Dataset& ds, const std::vector<Index>& rows, F&& gamma) {
  std::vector<double> resid;
  resid.reserve(rows.size());
  VectorXd x;
  for (Index i : rows) {
    ds.fill_x_row(i, x);
    resid.push_back(ds.y()[i] - gamma(x));
  }
  const double sd = stddev_of(resid);
  const double iqr = interquartile_range(resid);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread > 0.0 ? spread : iqr, iqr / 1.34);
  double bw = 0.9 * spread * std::pow(static_cast<double>(rows.size()), -0.2);
  if (!(bw > 0.0)) bw = 1e-3;
  VectorXd w(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < resid.size(); ++i) {
    w[static_cast<Index>(i)] = normal_pdf(resid[i] / bw) / bw;
  }
  return w;
}

/// Nuisances available to the plugin closed forms.
struct GaussianTreatmentModel {
  FittedFunction mean;   // conditional mean of the treatment (or price) given Z
  double variance = 1.0;
};

struct PluginNuisances {
  std::optional<FittedFunction> propensity;              // binary CATE
  std::optional<GaussianTreatmentModel> treatment_model; // continuous CATE
  // EV bound: fitted conditional density of the price given Z, evaluated at
  // (p, x). Use from_gaussian for the usual normal model.
  std::function<double(double, const Eigen::Ref<const VectorXd>&)> price_density;
  double density_floor = 1e-3;

  static std::function<double(double, const Eigen::Ref<const VectorXd>&)> from_gaussian(
      GaussianTreatmentModel model) {
    return [model](double p, const Eigen::Ref<const VectorXd>& x) {
      const double sd = std::sqrt(model.variance);
      return normal_pdf((p - model.mean.predict(x)) / sd) / sd;
    };
  }
};

/// Plug-in Riesz representer from closed forms with fitted nuisances:
/// inverse-propensity weights for the binary CATE, the Gaussian score for a
/// continuous treatment, and the floored price-density form for the EV bound.
inline RieszEstimate plugin_alpha(const MomentFunctional& mf, const PluginNuisances& nuisances) {
  RieszEstimate est;
  est.method = RieszMethod::Plugin;
  switch (mf.kind()) {
    case MomentFunctional::Kind::CateBinary: {
      if (!nuisances.propensity) {
        throw std::invalid_argument("plugin_alpha: binary CATE requires a propensity fit");
      }
      const FittedFunction pi = *nuisances.propensity;
      est.alpha_fn = [pi](const Eigen::Ref<const VectorXd>& x) {
        const double p = pi.predict(x);
        return x[0] / p - (1.0 - x[0]) / (1.0 - p);
      };
      return est;
    }
    case MomentFunctional::Kind::CateContinuous: {
      if (!nuisances.treatment_model) {
        throw std::invalid_argument(
            "plugin_alpha: continuous CATE requires a treatment density model");
      }
      const GaussianTreatmentModel tm = *nuisances.treatment_model;
      est.alpha_fn = [tm](const Eigen::Ref<const VectorXd>& x) {
        return (x[0] - tm.mean.predict(x)) / tm.variance;
      };
      return est;
    }
    case MomentFunctional::Kind::EvBound: {
      if (!nuisances.price_density) {
        throw std::invalid_argument("plugin_alpha: EV bound requires a price density model");
      }
      const auto density_fn = nuisances.price_density;
      const double floor = nuisances.density_floor;
      const ColumnOrConst omega = mf.omega();
      const ColumnOrConst plo = mf.price_lo();
      const ColumnOrConst phi = mf.price_hi();
      const double kappa = mf.kappa();
      const Index income = mf.income_col();
      est.alpha_fn = [density_fn, floor, omega, plo, phi, kappa, income](
                         const Eigen::Ref<const VectorXd>& x) {
        const double p1 = x[0];
        const double lo = plo.resolve_from_x(x);
        const double hi = phi.resolve_from_x(x);
        if (!(p1 > lo && p1 < hi)) return 0.0;
        const double density = std::max(density_fn(p1, x), floor);
        const double z1 = x[1 + income];
        return omega.resolve_from_x(x) * (z1 / p1) * std::exp(-kappa * (p1 - lo)) / density;
      };
      return est;
    }
    case MomentFunctional::Kind::QuantileDerivative:
      throw std::invalid_argument(
          "plugin_alpha: no closed form for the quantile derivative; use auto-weighted");
  }
  throw std::invalid_argument("plugin_alpha: unknown functional kind");
}

/// Empirical representer residuals r_j = (1/n) sum_i [m(W_i, phi_j) -
/// alpha(X_i) phi_j(X_i)]; for the automatic fit these are the KKT residuals
/// of the penalized objective, bounded by lambda in absolute value.
template <class MF, class AlphaFn>
VectorXd representer_residuals(const Dataset& ds, const std::vector<Index>& rows, const MF& mf,
                               AlphaFn&& alpha, const Dictionary& dict) {
  const Index k = dict.size();
  VectorXd r = detail::moment_vector(ds, rows, mf, dict);
  VectorXd x;
  VectorXd phi_row;
  for (Index i : rows) {
    ds.fill_x_row(i, x);
    dict.eval_row(x, phi_row);
    r -= alpha(x) / static_cast<double>(rows.size()) * phi_row;
  }
  return r;
}

}  // namespace condml
