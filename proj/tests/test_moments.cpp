#include "condml/moments.hpp"
#include "condml/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace condml;

Dataset one_row_dataset(double y, double d, std::vector<double> z) {
  VectorXd yv(1), dv(1);
  yv << y;
  dv << d;
  MatrixXd zm(1, static_cast<Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) zm(0, static_cast<Index>(j)) = z[j];
  return Dataset(yv, dv, zm, zm.leftCols(1));
}

TEST(CateBinary, PointEvaluations) {
  const auto mf = MomentFunctional::cate_binary();
  const Dataset ds = one_row_dataset(0.0, 1.0, {3.0, 0.5});

  auto gamma_d = [](const Eigen::Ref<const VectorXd>& x) { return x[0]; };
  EXPECT_DOUBLE_EQ(mf.m(ds, 0, gamma_d), 1.0);

  auto gamma_z = [](const Eigen::Ref<const VectorXd>& x) { return x[1]; };
  EXPECT_DOUBLE_EQ(mf.m(ds, 0, gamma_z), 0.0);

  auto gamma_dz = [](const Eigen::Ref<const VectorXd>& x) { return x[0] * x[1]; };
  EXPECT_DOUBLE_EQ(mf.m(ds, 0, gamma_dz), 3.0);
}

TEST(CateContinuous, LinearFunctionsDifferencedExactly) {
  const auto mf = MomentFunctional::cate_continuous(1e-4);
  const Dataset ds = one_row_dataset(0.0, 0.7, {0.2, 0.3});
  const double beta = -2.5;
  auto gamma = [&](const Eigen::Ref<const VectorXd>& x) { return beta * x[0]; };
  EXPECT_NEAR(mf.m(ds, 0, gamma), beta, 1e-10);
}

TEST(CateContinuous, QuadraticDerivative) {
  const auto mf = MomentFunctional::cate_continuous(1e-4);
  const Dataset ds = one_row_dataset(0.0, 1.0, {0.0, 0.0});
  auto gamma = [](const Eigen::Ref<const VectorXd>& x) { return x[0] * x[0]; };
  EXPECT_NEAR(mf.m(ds, 0, gamma), 2.0, 1e-6);
}

TEST(CateContinuous, RichardsonSlopeOnCubic) {
  // Central differences have O(delta^2) error; halving delta four times on a
  // cubic must give a log-log slope of 2 within 0.2.
  const Dataset ds = one_row_dataset(0.0, 0.5, {0.0, 0.0});
  auto gamma = [](const Eigen::Ref<const VectorXd>& x) { return std::pow(x[0], 3); };
  const double truth = 3.0 * 0.5 * 0.5;
  std::vector<double> log_delta, log_err;
  for (double delta : {2e-2, 1e-2, 5e-3, 2.5e-3}) {
    const auto mf = MomentFunctional::cate_continuous(delta);
    const double err = std::abs(mf.m(ds, 0, gamma) - truth);
    ASSERT_GT(err, 0.0);
    log_delta.push_back(std::log(delta));
    log_err.push_back(std::log(err));
  }
  EXPECT_NEAR(ols_slope(log_delta, log_err), 2.0, 0.2);
}

TEST(EvBound, AnalyticConstantIntegrand) {
  // gamma == 2, omega == 1, kappa = 0, z1 = 1, prices [1, e]:
  // m = 2 * ln(e/1) = 2.
  const auto mf = MomentFunctional::ev_bound(ColumnOrConst::constant(1.0), 0.0,
                                             ColumnOrConst::constant(1.0),
                                             ColumnOrConst::constant(std::exp(1.0)));
  const Dataset ds = one_row_dataset(0.0, 1.5, {1.0, 0.0});
  auto gamma = [](const Eigen::Ref<const VectorXd>&) { return 2.0; };
  EXPECT_NEAR(mf.m(ds, 0, gamma), 2.0, 1e-8);
}

TEST(EvBound, UnitIntegrand) {
  const auto mf =
      MomentFunctional::ev_bound(ColumnOrConst::constant(1.0), 0.0, ColumnOrConst::constant(1.0),
                                 ColumnOrConst::constant(3.0));
  const Dataset ds = one_row_dataset(0.0, 2.0, {1.0, 0.0});
  auto gamma = [](const Eigen::Ref<const VectorXd>& x) { return x[0]; };  // (z1/u)*u = 1
  EXPECT_NEAR(mf.m(ds, 0, gamma), 2.0, 1e-8);
}

TEST(EvBound, MatchesHighResolutionTrapezoidOracle) {
  const double kappa = 0.5;
  const auto mf =
      MomentFunctional::ev_bound(ColumnOrConst::constant(1.0), kappa,
                                 ColumnOrConst::constant(1.0), ColumnOrConst::constant(3.0));
  const Dataset ds = one_row_dataset(0.0, 2.0, {1.0, 0.0});
  auto gamma = [](const Eigen::Ref<const VectorXd>& x) { return x[0]; };

  // 1e5-node trapezoid oracle of (z1/u) * u * exp(-kappa (u - 1)) on [1, 3].
  const int nodes = 100000;
  const double a = 1.0, b = 3.0;
  const double step = (b - a) / (nodes - 1);
  long double acc = 0.0L;
  for (int i = 0; i < nodes; ++i) {
    const double u = a + step * i;
    const long double f = std::exp(-kappa * (u - a));
    acc += (i == 0 || i == nodes - 1) ? f / 2.0L : f;
  }
  const double oracle = static_cast<double>(acc * step);
  EXPECT_NEAR(mf.m(ds, 0, gamma), oracle, 1e-7);
}

TEST(EvBound, RejectsInvertedPrices) {
  const auto mf =
      MomentFunctional::ev_bound(ColumnOrConst::constant(1.0), 0.0, ColumnOrConst::constant(2.0),
                                 ColumnOrConst::constant(1.0));
  const Dataset ds = one_row_dataset(0.0, 1.5, {1.0, 0.0});
  auto gamma = [](const Eigen::Ref<const VectorXd>&) { return 1.0; };
  EXPECT_THROW(mf.m(ds, 0, gamma), std::invalid_argument);
  EXPECT_THROW(MomentFunctional::ev_bound(ColumnOrConst::constant(1.0), -0.5,
                                          ColumnOrConst::constant(1.0),
                                          ColumnOrConst::constant(2.0)),
               std::invalid_argument);
}

TEST(EvBound, ColumnResolvedParametersAndMonotonicity) {
  // omega and the price bounds pulled from z columns.
  const auto mf = MomentFunctional::ev_bound(ColumnOrConst::column(1), 0.0,
                                             ColumnOrConst::column(2), ColumnOrConst::column(3));
  VectorXd y(1), d(1);
  y << 0.0;
  d << 1.0;
  MatrixXd z(1, 4);
  z << 1.0, 2.0, 1.0, 3.0;  // z1 (income), omega, p_lo, p_hi
  Dataset ds(y, d, z, z.leftCols(1));
  auto lo_fn = [](const Eigen::Ref<const VectorXd>& x) { return x[0]; };
  auto hi_fn = [](const Eigen::Ref<const VectorXd>& x) { return x[0] + 0.5; };
  const double m_lo = mf.m(ds, 0, lo_fn);
  const double m_hi = mf.m(ds, 0, hi_fn);
  EXPECT_NEAR(m_lo, 2.0 * 2.0, 1e-8);  // omega * integral of 1 over [1,3]
  EXPECT_GT(m_hi, m_lo);               // pointwise larger gamma, omega >= 0
}

TEST(QuantileDerivative, ResidualValues) {
  const auto mf = MomentFunctional::quantile_derivative(0.3);
  auto gamma = [](const Eigen::Ref<const VectorXd>&) { return 1.0; };
  const Dataset below = one_row_dataset(0.5, 0.0, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(mf.rho(below, 0, gamma), 0.7);  // Y <= gamma
  const Dataset above = one_row_dataset(1.5, 0.0, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(mf.rho(above, 0, gamma), -0.3);
}

TEST(QuantileDerivative, ResidualMeanZeroAtTrueQuantile) {
  // Y ~ Uniform(0,1), gamma == nu: E[1(Y <= nu) - nu] = 0.
  const double nu = 0.3;
  const auto mf = MomentFunctional::quantile_derivative(nu);
  const Index n = 100000;
  Rng rng(17);
  VectorXd y(n), d(n);
  MatrixXd z = MatrixXd::Zero(n, 2);
  for (Index i = 0; i < n; ++i) {
    y[i] = rng.uniform01();
    d[i] = 0.0;
  }
  Dataset ds(y, d, z, z.leftCols(1));
  auto gamma = [&](const Eigen::Ref<const VectorXd>&) { return nu; };
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += mf.rho(ds, i, gamma);
  EXPECT_NEAR(acc / static_cast<double>(n), 0.0, 0.01);
}

TEST(Moments, MeanTypeResidualIsPlainResidualBitForBit) {
  Rng rng(3);
  const auto mf = MomentFunctional::cate_binary();
  for (int i = 0; i < 20; ++i) {
    const double y = rng.normal();
    const Dataset ds = one_row_dataset(y, rng.bernoulli(0.5) ? 1.0 : 0.0,
                                       {rng.uniform01(), rng.uniform01()});
    auto gamma = [&](const Eigen::Ref<const VectorXd>& x) { return 0.3 * x[1] + x[0]; };
    const double expected = y - gamma(ds.x_row(0));
    EXPECT_EQ(mf.rho(ds, 0, gamma), expected);
  }
}

TEST(Moments, LinearityInGammaForAllKinds) {
  Rng rng(5);
  std::vector<MomentFunctional> kinds;
  kinds.push_back(MomentFunctional::cate_binary());
  kinds.push_back(MomentFunctional::cate_continuous(1e-4));
  kinds.push_back(MomentFunctional::ev_bound(ColumnOrConst::constant(1.0), 0.3,
                                             ColumnOrConst::constant(0.5),
                                             ColumnOrConst::constant(1.5)));
  kinds.push_back(MomentFunctional::quantile_derivative(0.4));

  for (const auto& mf : kinds) {
    for (int trial = 0; trial < 25; ++trial) {
      const Dataset ds = one_row_dataset(rng.normal(), rng.uniform(0.6, 0.9),
                                         {rng.uniform(0.5, 1.0), rng.uniform01()});
      const double c1 = rng.normal(), c2 = rng.normal(), c3 = rng.normal();
      const double e1 = rng.normal(), e2 = rng.normal(), e3 = rng.normal();
      auto g1 = [&](const Eigen::Ref<const VectorXd>& x) {
        return c1 + c2 * x[0] + c3 * std::sin(x[1] + x[0]);
      };
      auto g2 = [&](const Eigen::Ref<const VectorXd>& x) {
        return e1 * x[1] + e2 * x[0] * x[1] + e3 * std::cos(x[0]);
      };
      const double a = rng.uniform(-2, 2);
      const double b = rng.uniform(-2, 2);
      auto combo = [&](const Eigen::Ref<const VectorXd>& x) { return a * g1(x) + b * g2(x); };
      const double lhs = mf.m(ds, 0, combo);
      const double rhs = a * mf.m(ds, 0, g1) + b * mf.m(ds, 0, g2);
      EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(Moments, BindSetsStepFromTreatmentScaleAndValidates) {
  Rng rng(6);
  const Index n = 500;
  VectorXd y(n), d(n);
  MatrixXd z(n, 2);
  for (Index i = 0; i < n; ++i) {
    y[i] = rng.normal();
    d[i] = 10.0 * rng.normal();
    z(i, 0) = rng.uniform01();
    z(i, 1) = rng.uniform01();
  }
  Dataset ds(y, d, z, z.leftCols(1));
  auto mf = MomentFunctional::cate_continuous();
  mf.bind(ds);
  EXPECT_GT(mf.fd_step(), 5e-4);  // 1e-4 * sd(D) with sd ~ 10

  auto binary = MomentFunctional::cate_binary();
  EXPECT_THROW(binary.bind(ds), std::invalid_argument);
}

}  // namespace
