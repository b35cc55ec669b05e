#pragma once

#include "condml/common.hpp"
#include "condml/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace condml {

struct LlrOptions {
  int min_local_obs = 10;       // flag below this many positive weights
  double max_condition = 1e10;  // flag when the local Gram is worse than this
};

/// Locally linear fit over an evaluation grid: per point, the intercept of a
/// kernel-weighted regression of S on (1, v - V_i), with a sandwich standard
/// error and the Kish effective sample size. Points whose local design is
/// unusable are flagged rather than filled.
struct LocalLinearCurve {
  MatrixXd grid;      // G x r evaluation points
  VectorXd theta_hat; // intercepts (NaN at flagged points)
  MatrixXd beta_hat;  // local slopes, G x r
  VectorXd se;        // pointwise standard errors (NaN at flagged points)
  VectorXd ess;       // (sum w)^2 / sum w^2
  std::vector<std::uint8_t> flagged;
  double h = 0.0;
  KernelFamily kernel = KernelFamily::Epanechnikov;

  Index points() const { return grid.rows(); }
  Index flagged_count() const {
    Index c = 0;
    for (auto f : flagged) c += (f != 0);
    return c;
  }
};

/// Equispaced evaluation points between the 2.5% and 97.5% quantiles of each
/// V coordinate; multivariate grids take the Cartesian product.
inline MatrixXd default_grid(const MatrixXd& v, int points = 41, double q_lo = 0.025,
                             double q_hi = 0.975) {
  if (points < 1) throw std::invalid_argument("default_grid: need at least one point");
  const Index r = v.cols();
  std::vector<std::vector<double>> axes(static_cast<std::size_t>(r));
  for (Index j = 0; j < r; ++j) {
    std::vector<double> col(v.col(j).data(), v.col(j).data() + v.rows());
    std::sort(col.begin(), col.end());
    const double lo = quantile_sorted(col, q_lo);
    const double hi = quantile_sorted(col, q_hi);
    auto& axis = axes[static_cast<std::size_t>(j)];
    axis.resize(static_cast<std::size_t>(points));
    for (int g = 0; g < points; ++g) {
      axis[static_cast<std::size_t>(g)] =
          points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * g / (points - 1);
    }
  }
  Index total = 1;
  for (Index j = 0; j < r; ++j) total *= points;
  MatrixXd grid(total, r);
  for (Index row = 0; row < total; ++row) {
    Index rem = row;
    for (Index j = r - 1; j >= 0; --j) {
      grid(row, j) = axes[static_cast<std::size_t>(j)][static_cast<std::size_t>(rem % points)];
      rem /= points;
      if (j == 0) break;
    }
  }
  return grid;
}

namespace detail {

struct LocalSolve {
  bool ok = false;
  VectorXd coef;        // (theta, scaled slopes)
  MatrixXd a_inverse;   // (X'WX)^{-1} in scaled coordinates
  double sum_w = 0.0;
  double sum_w2 = 0.0;
  Index positive = 0;
};

// Weighted normal equations at one evaluation point. The local regressors are
// scaled by 1/h so the Gram stays well conditioned at small bandwidths; the
// intercept is unaffected and slopes are unscaled afterwards.
inline LocalSolve solve_local(const VectorXd& s, const MatrixXd& v,
                              const Eigen::Ref<const VectorXd>& point, double h,
                              const Kernel& kernel, const LlrOptions& opts) {
  const Index n = v.rows();
  const Index r = v.cols();
  const Index p = r + 1;
  LocalSolve out;
  MatrixXd a = MatrixXd::Zero(p, p);
  VectorXd c = VectorXd::Zero(p);
  VectorXd design(p);
  VectorXd u(r);
  for (Index i = 0; i < n; ++i) {
    u = point - v.row(i).transpose();
    const double w = kernel.eval(u, h);
    if (w <= 0.0) continue;
    design[0] = 1.0;
    design.tail(r) = u / h;
    a.selfadjointView<Eigen::Lower>().rankUpdate(design, w);
    c += w * s[i] * design;
    out.sum_w += w;
    out.sum_w2 += w * w;
    ++out.positive;
  }
  if (out.positive < std::max<Index>(opts.min_local_obs, r + 2)) return out;
  a = a.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
  const double emin = es.eigenvalues().minCoeff();
  const double emax = es.eigenvalues().maxCoeff();
  if (!(emin > 0.0) || emax / emin > opts.max_condition) return out;

  out.a_inverse = es.eigenvectors() *
                  es.eigenvalues().cwiseInverse().asDiagonal() *
                  es.eigenvectors().transpose();
  out.coef = out.a_inverse * c;
  out.ok = true;
  return out;
}

}  // namespace detail

/// Heteroskedasticity-robust pointwise standard error at one grid point:
/// sqrt of the intercept entry of (X'WX)^{-1} X'W Sigma W X (X'WX)^{-1} with
/// Sigma the diagonal of squared local residuals.
inline double local_sandwich_se(const VectorXd& s, const MatrixXd& v,
                                const Eigen::Ref<const VectorXd>& point, double h,
                                const Kernel& kernel, const detail::LocalSolve& fit) {
  const Index r = v.cols();
  const Index p = r + 1;
  MatrixXd meat = MatrixXd::Zero(p, p);
  VectorXd design(p);
  VectorXd u(r);
  for (Index i = 0; i < v.rows(); ++i) {
    u = point - v.row(i).transpose();
    const double w = kernel.eval(u, h);
    if (w <= 0.0) continue;
    design[0] = 1.0;
    design.tail(r) = u / h;
    const double resid = s[i] - fit.coef.dot(design);
    meat.selfadjointView<Eigen::Lower>().rankUpdate(design, w * w * resid * resid);
  }
  meat = meat.selfadjointView<Eigen::Lower>();
  const MatrixXd cov = fit.a_inverse * meat * fit.a_inverse;
  return std::sqrt(std::max(0.0, cov(0, 0)));
}

/// Locally linear regression of S on V over the evaluation grid.
inline LocalLinearCurve fit_local_linear(const VectorXd& s, const MatrixXd& v,
                                         const MatrixXd& grid, double h, const Kernel& kernel,
                                         const LlrOptions& opts = {}) {
  if (!(h > 0.0)) throw std::invalid_argument("fit_local_linear: bandwidth must be positive");
  if (s.size() != v.rows()) throw std::invalid_argument("fit_local_linear: S and V disagree");
  if (grid.cols() != v.cols()) throw std::invalid_argument("fit_local_linear: grid dimension");
  if (s.size() < v.cols() + 2) throw std::invalid_argument("fit_local_linear: too few rows");

  const Index g_count = grid.rows();
  const Index r = v.cols();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  LocalLinearCurve curve;
  curve.grid = grid;
  curve.theta_hat = VectorXd::Constant(g_count, nan);
  curve.beta_hat = MatrixXd::Constant(g_count, r, nan);
  curve.se = VectorXd::Constant(g_count, nan);
  curve.ess = VectorXd::Zero(g_count);
  curve.flagged.assign(static_cast<std::size_t>(g_count), 1);
  curve.h = h;
  curve.kernel = kernel.family;

  for (Index g = 0; g < g_count; ++g) {
    const VectorXd point = grid.row(g).transpose();
    const auto fit = detail::solve_local(s, v, point, h, kernel, opts);
    if (fit.sum_w2 > 0.0) curve.ess[g] = fit.sum_w * fit.sum_w / fit.sum_w2;
    if (!fit.ok) continue;
    curve.flagged[static_cast<std::size_t>(g)] = 0;
    curve.theta_hat[g] = fit.coef[0];
    curve.beta_hat.row(g) = (fit.coef.tail(r) / h).transpose();
    curve.se[g] = local_sandwich_se(s, v, point, h, kernel, fit);
  }
  return curve;
}

/// Standalone pointwise standard errors over a grid; same estimator the
/// full fit reports.
inline VectorXd pointwise_se(const VectorXd& s, const MatrixXd& v, const MatrixXd& grid, double h,
                             const Kernel& kernel, const LlrOptions& opts = {}) {
  return fit_local_linear(s, v, grid, h, kernel, opts).se;
}

/// Rule-of-thumb candidate bandwidths: a geometric ladder around
/// sd(V) * n^{-1/(r+4)}.
inline std::vector<double> default_bandwidth_grid(const MatrixXd& v, int count = 10) {
  const Index n = v.rows();
  const Index r = v.cols();
  double sd_prod = 1.0;
  for (Index j = 0; j < r; ++j) {
    const double m = v.col(j).mean();
    sd_prod *= std::sqrt((v.col(j).array() - m).square().mean());
  }
  double scale = std::pow(sd_prod, 1.0 / static_cast<double>(r));
  if (!(scale > 0.0)) scale = 1.0;
  const double pivot = scale * std::pow(static_cast<double>(n),
                                        -1.0 / (static_cast<double>(r) + 4.0));
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(count));
  const double lo = 0.3, hi = 4.0;
  for (int g = 0; g < count; ++g) {
    const double t = count == 1 ? 0.5 : static_cast<double>(g) / (count - 1);
    grid.push_back(pivot * lo * std::pow(hi / lo, t));
  }
  return grid;
}

namespace detail {

// Leave-one-out CV error of local linear prediction at the held-out V_i. The
// full-sample normal equations at V_i are downdated by observation i's own
// contribution, which only touches the intercept row because u_ii = 0.
inline bool loo_cv_error(const VectorXd& s, const MatrixXd& v, double h, const Kernel& kernel,
                         const LlrOptions& opts, double* out_err) {
  const Index n = v.rows();
  const Index r = v.cols();
  const Index p = r + 1;
  const double w_self = kernel.eval(VectorXd::Zero(r), h);

  // Sorted window over the first coordinate bounds the kernel support when
  // r == 1; otherwise scan all rows.
  std::vector<Index> order;
  const bool windowed = (r == 1);
  if (windowed) {
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return v(a, 0) < v(b, 0); });
  }
  const double radius = kernel.support_radius() * h;

  double err = 0.0;
  Index valid = 0;
  MatrixXd a(p, p);
  VectorXd c(p);
  VectorXd design(p);
  VectorXd u(r);
  std::size_t win_lo = 0;

  auto accumulate = [&](Index i, Index j) {
    u = v.row(i).transpose() - v.row(j).transpose();
    const double w = kernel.eval(u, h);
    if (w <= 0.0) return 0;
    design[0] = 1.0;
    design.tail(r) = u / h;
    a.selfadjointView<Eigen::Lower>().rankUpdate(design, w);
    c += w * s[j] * design;
    return 1;
  };

  for (Index pos = 0; pos < n; ++pos) {
    const Index i = windowed ? order[static_cast<std::size_t>(pos)] : pos;
    a.setZero();
    c.setZero();
    Index positive = 0;
    if (windowed) {
      while (win_lo < static_cast<std::size_t>(n) &&
             v(order[win_lo], 0) < v(i, 0) - radius) {
        ++win_lo;
      }
      for (std::size_t q = win_lo; q < static_cast<std::size_t>(n); ++q) {
        const Index j = order[q];
        if (v(j, 0) > v(i, 0) + radius) break;
        positive += accumulate(i, j);
      }
    } else {
      for (Index j = 0; j < n; ++j) positive += accumulate(i, j);
    }
    // Remove observation i itself.
    a(0, 0) -= w_self;
    c[0] -= w_self * s[i];
    positive -= (w_self > 0.0) ? 1 : 0;
    if (positive < std::max<Index>(opts.min_local_obs, r + 2)) continue;
    a = a.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
    const double emin = es.eigenvalues().minCoeff();
    const double emax = es.eigenvalues().maxCoeff();
    if (!(emin > 0.0) || emax / emin > opts.max_condition) continue;
    const double pred = (es.eigenvectors() *
                         es.eigenvalues().cwiseInverse().asDiagonal() *
                         es.eigenvectors().transpose() * c)(0);
    err += (s[i] - pred) * (s[i] - pred);
    ++valid;
  }
  if (valid == 0) return false;
  *out_err = err / static_cast<double>(valid);
  return true;
}

}  // namespace detail

/// Leave-one-out bandwidth selection over a candidate grid; ties break toward
/// the larger bandwidth, and the optional undersmoothing multiplier is
/// applied to the winner (h_used = undersmooth * h_cv).
inline double select_bandwidth(const VectorXd& s, const MatrixXd& v, const Kernel& kernel,
                               const std::vector<double>& candidates, double undersmooth = 1.0,
                               const LlrOptions& opts = {}, double* h_cv_out = nullptr) {
  if (candidates.empty()) throw std::invalid_argument("select_bandwidth: empty candidate grid");
  std::vector<double> grid = candidates;
  std::sort(grid.begin(), grid.end());

  double best_err = std::numeric_limits<double>::infinity();
  bool any = false;
  std::vector<std::pair<double, double>> results;  // (h, cv error)
  for (double h : grid) {
    if (!(h > 0.0)) throw std::invalid_argument("select_bandwidth: bandwidths must be positive");
    double err = 0.0;
    if (!detail::loo_cv_error(s, v, h, kernel, opts, &err)) continue;
    results.emplace_back(h, err);
    best_err = std::min(best_err, err);
    any = true;
  }
  if (!any) {
    throw NoValidBandwidthError("select_bandwidth: every candidate produced all-flagged fits");
  }
  // Ties within floating noise of the minimum go to the largest h.
  const double tie_cut = best_err * (1.0 + 1e-9) + 1e-15;
  double chosen = results.front().first;
  for (const auto& [h, err] : results) {
    if (err <= tie_cut) chosen = std::max(chosen, h);
  }
  if (h_cv_out) *h_cv_out = chosen;
  return chosen * undersmooth;
}

}  // namespace condml
