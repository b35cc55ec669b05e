#include "condml/learners.hpp"
#include "condml/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace condml;

// ---------------------------------------------------------------------------
// Independent oracles. These recompute objectives from their definitions and
// never call the solvers under test.

double lasso_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& b, double lambda) {
  const double n = static_cast<double>(x.rows());
  return (y - x * b).squaredNorm() / (2.0 * n) + lambda * b.lpNorm<1>();
}

double check_loss_value(double u, double nu) { return u >= 0.0 ? nu * u : (nu - 1.0) * u; }

double quantile_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& b, double nu,
                          double lambda) {
  const VectorXd r = y - x * b;
  double f = 0.0;
  for (Index i = 0; i < r.size(); ++i) f += check_loss_value(r[i], nu);
  return f / static_cast<double>(r.size()) + lambda * b.lpNorm<1>();
}

double logistic_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& b, double lambda,
                          const std::vector<Index>& unpenalized) {
  const VectorXd eta = x * b;
  double f = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double e = eta[i];
    f += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - y[i] * e;
  }
  std::vector<bool> pen(static_cast<std::size_t>(b.size()), true);
  for (Index j : unpenalized) pen[static_cast<std::size_t>(j)] = false;
  for (Index j = 0; j < b.size(); ++j) {
    if (pen[static_cast<std::size_t>(j)]) f += lambda * b[j] * b[j];
  }
  return f;
}

// Exhaustive grid minimization over b in [-3, 3]^2.
VectorXd grid_minimize_2d(const std::function<double(double, double)>& objective, double lo,
                          double hi, double step) {
  double best = std::numeric_limits<double>::infinity();
  double b1 = 0, b2 = 0;
  const auto count = static_cast<long>(std::lround((hi - lo) / step));
  for (long i = 0; i <= count; ++i) {
    const double u = lo + step * i;
    for (long j = 0; j <= count; ++j) {
      const double v = lo + step * j;
      const double f = objective(u, v);
      if (f < best) {
        best = f;
        b1 = u;
        b2 = v;
      }
    }
  }
  VectorXd out(2);
  out << b1, b2;
  return out;
}

// Columns standardized to mean zero and unit 1/n second moment, so the
// solver's internal standardization is the identity and the raw-space KKT
// conditions apply directly.
MatrixXd standardized_design(Index n, Index k, double correlation, Rng& rng) {
  MatrixXd x(n, k);
  for (Index i = 0; i < n; ++i) {
    double base = rng.normal();
    for (Index j = 0; j < k; ++j) {
      x(i, j) = correlation * base + std::sqrt(1.0 - correlation * correlation) * rng.normal();
    }
  }
  for (Index j = 0; j < k; ++j) {
    x.col(j).array() -= x.col(j).mean();
    x.col(j) /= std::sqrt(x.col(j).squaredNorm() / static_cast<double>(n));
  }
  return x;
}

// ---------------------------------------------------------------------------
// Ridge

TEST(Ridge, ExactInterpolationWithoutPenalty) {
  MatrixXd x(2, 1);
  x << 1, 2;
  VectorXd y(2);
  y << 2, 4;
  const FittedFunction f = fit_ridge(x, y, 0.0);
  ASSERT_EQ(f.coefficients().size(), 1);
  EXPECT_NEAR(f.coefficients()[0], 2.0, 1e-12);
}

TEST(Ridge, ClosedFormShrinkage) {
  MatrixXd x(1, 1);
  x << 1;
  VectorXd y(1);
  y << 1;
  const FittedFunction f = fit_ridge(x, y, 1.0);
  EXPECT_NEAR(f.coefficients()[0], 0.5, 1e-12);  // X'y / (X'X + lambda)
}

TEST(Ridge, HugePenaltyKillsNonConstantCoefficients) {
  Rng rng(11);
  const Index n = 60;
  MatrixXd x(n, 3);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.uniform(-1, 1);
    x(i, 2) = rng.uniform(-1, 1);
    y[i] = 2.0 + x(i, 1) - x(i, 2) + 0.1 * rng.normal();
  }
  const VectorXd b = ridge_solve(x, y, 1e6, {0});
  EXPECT_LT(std::abs(b[1]), 1e-3);
  EXPECT_LT(std::abs(b[2]), 1e-3);
}

TEST(Ridge, SingularWithoutPenaltyThrows) {
  MatrixXd x(3, 2);
  x << 1, 1, 2, 2, 3, 3;  // duplicated column
  VectorXd y(3);
  y << 1, 2, 3;
  EXPECT_THROW(ridge_solve(x, y, 0.0), SingularSystemError);
  EXPECT_NO_THROW(ridge_solve(x, y, 1e-3));
}

TEST(Ridge, FullRankSquareSystemInterpolates) {
  Rng rng(12);
  MatrixXd x(5, 5);
  VectorXd y(5);
  for (Index i = 0; i < 5; ++i) {
    y[i] = rng.normal();
    for (Index j = 0; j < 5; ++j) x(i, j) = rng.normal();
  }
  const VectorXd b = ridge_solve(x, y, 0.0);
  EXPECT_LT((y - x * b).lpNorm<Eigen::Infinity>(), 1e-8);
  const VectorXd bl = lasso_solve(x, y, 0.0);
  EXPECT_LT((y - x * bl).lpNorm<Eigen::Infinity>(), 1e-8);
}

// ---------------------------------------------------------------------------
// Lasso

TEST(Lasso, SoftThresholdOnStandardizedCovariate) {
  // x'y/n = 1 on a standardized single covariate.
  MatrixXd x(4, 1);
  x << 1, -1, 1, -1;
  VectorXd y(4);
  y << 1, -1, 1, -1;
  EXPECT_NEAR(fit_lasso(x, y, 0.4).coefficients()[0], 0.6, 1e-10);
  EXPECT_DOUBLE_EQ(fit_lasso(x, y, 1.5).coefficients()[0], 0.0);
}

TEST(Lasso, MatchesExhaustiveGridOracle) {
  Rng rng(21);
  const Index n = 12;
  MatrixXd x = standardized_design(n, 2, 0.6, rng);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = 1.2 * x(i, 0) - 0.4 * x(i, 1) + 0.3 * rng.normal();
  const double lambda = 0.1;

  const VectorXd b = lasso_solve(x, y, lambda);
  const VectorXd oracle = grid_minimize_2d(
      [&](double b1, double b2) {
        VectorXd beta(2);
        beta << b1, b2;
        return lasso_objective(x, y, beta, lambda);
      },
      -3.0, 3.0, 1e-3);
  EXPECT_NEAR(b[0], oracle[0], 2e-3);
  EXPECT_NEAR(b[1], oracle[1], 2e-3);
}

TEST(Lasso, KktConditionsOnStandardizedDesigns) {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 40;
    const Index k = 4;
    MatrixXd x = standardized_design(n, k, 0.5, rng);
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
      y[i] = x(i, 0) - 0.5 * x(i, 2) + 0.5 * rng.normal();
    }
    const double lambda = 0.05 + 0.1 * rng.uniform01();
    const VectorXd b = lasso_solve(x, y, lambda);
    const VectorXd grad = x.transpose() * (y - x * b) / static_cast<double>(n);
    for (Index j = 0; j < k; ++j) {
      if (b[j] == 0.0) {
        EXPECT_LE(std::abs(grad[j]), lambda + 1e-6);
      } else {
        EXPECT_NEAR(std::abs(grad[j]), lambda, 1e-6);
        EXPECT_GT(grad[j] * b[j], 0.0);
      }
    }
  }
}

TEST(Lasso, InterceptUnpenalizedAndUnstandardizedCorrectly) {
  Rng rng(23);
  const Index n = 80;
  MatrixXd x(n, 2);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = 3.0 + 2.0 * rng.normal();  // deliberately off-scale
    y[i] = 5.0 + 0.7 * x(i, 1) + 0.2 * rng.normal();
  }
  const VectorXd b = lasso_solve(x, y, 1e-4, {0});
  EXPECT_NEAR(b[0], 5.0, 0.2);
  EXPECT_NEAR(b[1], 0.7, 0.05);
  // Full shrinkage leaves the intercept at the sample mean.
  const VectorXd b0 = lasso_solve(x, y, 1e3, {0});
  EXPECT_DOUBLE_EQ(b0[1], 0.0);
  EXPECT_NEAR(b0[0], y.mean(), 1e-10);
}

TEST(Lasso, NeverWorseThanZeroCoefficients) {
  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 30;
    MatrixXd x = standardized_design(n, 3, 0.3, rng);
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) y[i] = rng.normal();
    const double lambda = rng.uniform(0.0, 0.5);
    const VectorXd b = lasso_solve(x, y, lambda);
    EXPECT_LE(lasso_objective(x, y, b, lambda),
              lasso_objective(x, y, VectorXd::Zero(3), lambda) + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Logistic

TEST(Logistic, ConstantOnlyHalfLabels) {
  MatrixXd x = MatrixXd::Ones(8, 1);
  VectorXd y(8);
  y << 0, 1, 0, 1, 0, 1, 0, 1;
  const FittedFunction f = fit_logistic(x, y, 0.0, {0});
  VectorXd row = VectorXd::Ones(1);
  EXPECT_NEAR(f.predict(row), 0.5, 1e-9);
}

TEST(Logistic, InterceptIsLogitOfMean) {
  MatrixXd x = MatrixXd::Ones(8, 1);
  VectorXd y(8);
  y << 1, 1, 1, 0, 1, 1, 1, 0;  // 75% ones
  const FittedFunction f = fit_logistic(x, y, 0.0, {0});
  EXPECT_NEAR(f.coefficients()[0], std::log(3.0), 1e-8);
}

TEST(Logistic, GradientVanishesAndMatchesFiniteDifferences) {
  Rng rng(31);
  const Index n = 60;
  MatrixXd x(n, 3);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = rng.normal();
    const double p = 1.0 / (1.0 + std::exp(-(0.3 + x(i, 1) - 0.5 * x(i, 2))));
    y[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  }
  const double lambda = 0.05;
  const std::vector<Index> unpen = {0};
  const VectorXd b = logistic_solve(x, y, lambda, unpen);

  // Analytic gradient at the optimum.
  VectorXd p(n);
  for (Index i = 0; i < n; ++i) p[i] = 1.0 / (1.0 + std::exp(-x.row(i).dot(b)));
  VectorXd grad = x.transpose() * (p - y);
  grad[1] += 2.0 * lambda * b[1];
  grad[2] += 2.0 * lambda * b[2];
  EXPECT_LT(grad.lpNorm<Eigen::Infinity>(), 1e-8);

  // Finite-difference oracle.
  const double step = 1e-6;
  for (Index j = 0; j < 3; ++j) {
    VectorXd up = b, dn = b;
    up[j] += step;
    dn[j] -= step;
    const double fd =
        (logistic_objective(x, y, up, lambda, unpen) - logistic_objective(x, y, dn, lambda, unpen)) /
        (2.0 * step);
    EXPECT_NEAR(fd, grad[j], 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Logistic, SeparationWithoutPenaltyDiagnosed) {
  MatrixXd x(6, 2);
  VectorXd y(6);
  for (Index i = 0; i < 6; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = static_cast<double>(i) - 2.5;
    y[i] = x(i, 1) > 0 ? 1.0 : 0.0;  // perfectly separated
  }
  EXPECT_THROW(logistic_solve(x, y, 0.0, {0}), ConvergenceError);
  EXPECT_NO_THROW(logistic_solve(x, y, 0.1, {0}));
}

TEST(Logistic, PropensityPredictionsAreClipped) {
  MatrixXd x = MatrixXd::Ones(4, 1);
  VectorXd y(4);
  y << 1, 1, 1, 1;
  VectorXd coef(1);
  coef << 20.0;  // logistic(20) ~ 1 - 2e-9
  const FittedFunction f(nullptr, coef, GammaTarget::propensity(), 0.01);
  VectorXd row = VectorXd::Ones(1);
  EXPECT_DOUBLE_EQ(f.predict(row), 0.99);
}

// ---------------------------------------------------------------------------
// Quantile

TEST(Quantile, ConstantOnlyMedian) {
  MatrixXd x = MatrixXd::Ones(5, 1);
  VectorXd y(5);
  y << 1, 2, 3, 4, 5;
  const FittedFunction f = fit_quantile(x, y, 0.5, 0.0, {0});
  EXPECT_NEAR(f.coefficients()[0], 3.0, 1e-6);
}

TEST(Quantile, ConstantOnlyQuartileInterval) {
  MatrixXd x = MatrixXd::Ones(100, 1);
  VectorXd y(100);
  for (Index i = 0; i < 100; ++i) y[i] = static_cast<double>(i + 1);
  const FittedFunction f = fit_quantile(x, y, 0.25, 0.0, {0});
  EXPECT_GE(f.coefficients()[0], 25.0 - 1e-6);
  EXPECT_LE(f.coefficients()[0], 26.0 + 1e-6);
}

TEST(Quantile, ObjectiveMatchesGridOracle) {
  Rng rng(41);
  const Index n = 40;
  MatrixXd x = standardized_design(n, 2, 0.4, rng);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = 0.8 * x(i, 0) - 0.3 * x(i, 1) + rng.normal();
  const double nu = 0.3;

  const VectorXd b = quantile_solve(x, y, nu, 0.0);
  const VectorXd oracle = grid_minimize_2d(
      [&](double b1, double b2) {
        VectorXd beta(2);
        beta << b1, b2;
        return quantile_objective(x, y, beta, nu, 0.0);
      },
      -3.0, 3.0, 1e-2);
  EXPECT_NEAR(quantile_objective(x, y, b, nu, 0.0),
              quantile_objective(x, y, oracle, nu, 0.0), 1e-3);
}

TEST(Quantile, NeverWorseThanZeroCoefficients) {
  Rng rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    const Index n = 30;
    MatrixXd x = standardized_design(n, 3, 0.2, rng);
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) y[i] = rng.normal();
    const double nu = 0.2 + 0.6 * rng.uniform01();
    const double lambda = rng.uniform(0.0, 0.3);
    const VectorXd b = quantile_solve(x, y, nu, lambda);
    EXPECT_LE(quantile_objective(x, y, b, nu, lambda),
              quantile_objective(x, y, VectorXd::Zero(3), nu, lambda) + 1e-10);
  }
}

TEST(Quantile, RejectsBadLevel) {
  MatrixXd x = MatrixXd::Ones(3, 1);
  VectorXd y(3);
  y << 1, 2, 3;
  EXPECT_THROW(quantile_solve(x, y, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(quantile_solve(x, y, 1.0, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Cross-validated penalties and dictionary-level fitting

TEST(CvLambda, DeterministicAndFromGrid) {
  Rng rng(51);
  const Index n = 90;
  MatrixXd x(n, 5);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Index j = 1; j < 5; ++j) x(i, j) = rng.normal();
    y[i] = 1.0 + 2.0 * x(i, 1) + 0.5 * rng.normal();
  }
  const double l1 = cv_lambda(x, y, LearnerMethod::Lasso, 0.5, {0}, 5, 7);
  const double l2 = cv_lambda(x, y, LearnerMethod::Lasso, 0.5, {0}, 5, 7);
  EXPECT_DOUBLE_EQ(l1, l2);
  EXPECT_GT(l1, 0.0);
  // Strong signal: CV should not pick the fully-shrinking penalty.
  const VectorXd b = lasso_solve(x, y, l1, {0});
  EXPECT_GT(std::abs(b[1]), 0.5);
}

TEST(FitLearner, PredictsThroughDictionary) {
  Rng rng(52);
  const Index n = 200;
  VectorXd y(n), d(n);
  MatrixXd z(n, 2);
  for (Index i = 0; i < n; ++i) {
    d[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    z(i, 0) = rng.uniform01();
    z(i, 1) = rng.uniform01();
    y[i] = 2.0 + d[i] * (1.0 + z(i, 0)) + 0.5 * z(i, 1);
  }
  Dataset ds(y, d, z, z.leftCols(1));
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});

  DictionaryConfig dcfg;
  dcfg.degree = 1;
  dcfg.treat_interactions = true;
  auto dict = build_dictionary(dcfg, ds, rows);

  LearnerConfig lcfg;
  lcfg.method = LearnerMethod::Ridge;
  lcfg.lambda = 0.0;
  const FittedFunction f = fit_learner(ds, rows, dict, GammaTarget::mean(), lcfg);
  VectorXd x = ds.x_row(3);
  EXPECT_NEAR(f.predict(x), y[3], 1e-8);  // exactly representable truth
}


TEST(Ridge, NeverWorseThanZeroCoefficients) {
  Rng rng(61);
  for (int trial = 0; trial < 8; ++trial) {
    const Index n = 25;
    MatrixXd x = standardized_design(n, 3, 0.4, rng);
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) y[i] = rng.normal();
    const double lambda = rng.uniform(0.0, 2.0);
    const VectorXd b = ridge_solve(x, y, lambda);
    const auto objective = [&](const VectorXd& beta) {
      return (y - x * beta).squaredNorm() + lambda * beta.squaredNorm();
    };
    EXPECT_LE(objective(b), objective(VectorXd::Zero(3)) + 1e-10);
  }
}

TEST(Logistic, NeverWorseThanZeroCoefficients) {
  Rng rng(62);
  for (int trial = 0; trial < 8; ++trial) {
    const Index n = 40;
    MatrixXd x(n, 2);
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = rng.normal();
      y[i] = rng.bernoulli(0.3 + 0.4 * (x(i, 1) > 0)) ? 1.0 : 0.0;
    }
    const double lambda = rng.uniform(0.01, 1.0);
    const VectorXd b = logistic_solve(x, y, lambda, {0});
    EXPECT_LE(logistic_objective(x, y, b, lambda, {0}),
              logistic_objective(x, y, VectorXd::Zero(2), lambda, {0}) + 1e-10);
  }
}

}  // namespace
