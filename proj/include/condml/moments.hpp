#pragma once

#include "condml/common.hpp"
#include "condml/dataset.hpp"
#include "condml/learners.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace condml {

/// A parameter that is either a fixed number or a reference to a z column,
/// resolved per observation.
struct ColumnOrConst {
  bool is_column = false;
  Index z_col = 0;
  double value = 0.0;

  static ColumnOrConst constant(double v) { return {false, 0, v}; }
  static ColumnOrConst column(Index zj) { return {true, zj, 0.0}; }

  double resolve(const Dataset& ds, Index i) const {
    return is_column ? ds.z()(i, z_col) : value;
  }

  /// Resolve from a regressor row whose layout is (D, Z).
  double resolve_from_x(const Eigen::Ref<const VectorXd>& x, Index z_offset = 1) const {
    return is_column ? x[z_offset + z_col] : value;
  }
};

/// Catalog entry for a conditional object of interest: the linear functional
/// m(W, gamma), its generalized residual rho(W, gamma), and the first-step
/// target for gamma. rho is Y - gamma(X) for mean-type functionals and
/// 1(Y <= gamma(X)) - nu for the quantile kind.
class MomentFunctional {
 public:
  enum class Kind { CateBinary, CateContinuous, EvBound, QuantileDerivative };

  static MomentFunctional cate_binary() {
    MomentFunctional f;
    f.kind_ = Kind::CateBinary;
    return f;
  }

  static MomentFunctional cate_continuous(double fd_step = 1e-4) {
    MomentFunctional f;
    f.kind_ = Kind::CateContinuous;
    f.fd_step_ = fd_step;
    return f;
  }

  static MomentFunctional ev_bound(ColumnOrConst omega, double kappa, ColumnOrConst price_lo,
                                   ColumnOrConst price_hi, Index income_col = 0,
                                   int quadrature_nodes = 201) {
    if (kappa < 0.0) throw std::invalid_argument("ev_bound: kappa must be nonnegative");
    if (quadrature_nodes < 3 || quadrature_nodes % 2 == 0) {
      throw std::invalid_argument("ev_bound: quadrature nodes must be odd and >= 3");
    }
    MomentFunctional f;
    f.kind_ = Kind::EvBound;
    f.omega_ = omega;
    f.kappa_ = kappa;
    f.price_lo_ = price_lo;
    f.price_hi_ = price_hi;
    f.income_col_ = income_col;
    f.nodes_ = quadrature_nodes;
    return f;
  }

  static MomentFunctional quantile_derivative(double nu, double fd_step = 1e-4) {
    if (!(nu > 0.0 && nu < 1.0)) throw std::invalid_argument("quantile level must be in (0,1)");
    MomentFunctional f;
    f.kind_ = Kind::QuantileDerivative;
    f.nu_ = nu;
    f.fd_step_ = fd_step;
    return f;
  }

  Kind kind() const { return kind_; }
  double quantile_level() const { return nu_; }
  double fd_step() const { return fd_step_; }
  const ColumnOrConst& omega() const { return omega_; }
  double kappa() const { return kappa_; }
  const ColumnOrConst& price_lo() const { return price_lo_; }
  const ColumnOrConst& price_hi() const { return price_hi_; }
  Index income_col() const { return income_col_; }

  GammaTarget gamma_target() const {
    return kind_ == Kind::QuantileDerivative ? GammaTarget::quantile(nu_) : GammaTarget::mean();
  }

  bool mean_type() const { return kind_ != Kind::QuantileDerivative; }

  /// Sign of v_rho(X) = d/da E[rho(W, gamma0 + a)|X] at a = 0: -1 for the
  /// mean residual Y - gamma(X), +1 for the quantile residual, whose slope is
  /// the conditional outcome density at the quantile.
  double rho_slope_sign() const { return mean_type() ? -1.0 : 1.0; }

  /// Validate against a dataset and set the finite-difference step from the
  /// treatment scale: delta = max(1e-4, 1e-4 * sd(D)).
  void bind(const Dataset& ds) {
    if (!ds.x_includes_treatment()) {
      throw std::invalid_argument("moment functional requires X = (D, Z)");
    }
    if (kind_ == Kind::CateBinary) ds.require_binary_treatment();
    if (kind_ == Kind::CateContinuous || kind_ == Kind::QuantileDerivative) {
      const double mean = ds.d().mean();
      const double sd = std::sqrt((ds.d().array() - mean).square().mean());
      fd_step_ = std::max(1e-4, 1e-4 * sd);
    }
    if (kind_ == Kind::EvBound && income_col_ >= ds.z_dim()) {
      throw std::invalid_argument("ev_bound: income column out of range");
    }
  }

  /// m(W_i, gamma) for any gamma evaluable at regressor rows.
  template <class F>
  double m(const Dataset& ds, Index i, F&& gamma) const {
    switch (kind_) {
      case Kind::CateBinary: {
        VectorXd x = ds.x_row(i);
        x[0] = 1.0;
        const double g1 = gamma(x);
        x[0] = 0.0;
        return g1 - gamma(x);
      }
      case Kind::CateContinuous:
      case Kind::QuantileDerivative: {
        VectorXd x = ds.x_row(i);
        const double d0 = x[0];
        x[0] = d0 + fd_step_;
        const double up = gamma(x);
        x[0] = d0 - fd_step_;
        return (up - gamma(x)) / (2.0 * fd_step_);
      }
      case Kind::EvBound:
        return ev_bound_m(ds, i, gamma);
    }
    return 0.0;
  }

  /// Generalized residual rho(W_i, gamma); depends on gamma only through
  /// gamma(X_i).
  template <class F>
  double rho(const Dataset& ds, Index i, F&& gamma) const {
    const double g = gamma(ds.x_row(i));
    if (mean_type()) return ds.y()[i] - g;
    return (ds.y()[i] <= g ? 1.0 : 0.0) - nu_;
  }

  std::string kind_name() const {
    switch (kind_) {
      case Kind::CateBinary: return "cate_binary";
      case Kind::CateContinuous: return "cate_continuous";
      case Kind::EvBound: return "ev_bound";
      case Kind::QuantileDerivative: return "quantile_derivative";
    }
    return "unknown";
  }

 private:
  // omega(Z) * int_{plo}^{phi} (Z1/u) gamma(u, Z) exp(-kappa (u - plo)) du by
  // composite Simpson on a fixed node count (exact for cubics per segment).
  template <class F>
  double ev_bound_m(const Dataset& ds, Index i, F&& gamma) const {
    const double plo = price_lo_.resolve(ds, i);
    const double phi = price_hi_.resolve(ds, i);
    if (!(plo < phi)) {
      throw std::invalid_argument("ev_bound: price bounds require p_lo < p_hi");
    }
    const double omega = omega_.resolve(ds, i);
    const double z1 = ds.z()(i, income_col_);
    VectorXd x = ds.x_row(i);
    const double step = (phi - plo) / static_cast<double>(nodes_ - 1);
    auto integrand = [&](double u) {
      x[0] = u;
      return (z1 / u) * gamma(x) * std::exp(-kappa_ * (u - plo));
    };
    double acc = integrand(plo) + integrand(phi);
    for (int kidx = 1; kidx < nodes_ - 1; ++kidx) {
      const double u = plo + step * kidx;
      acc += integrand(u) * (kidx % 2 == 1 ? 4.0 : 2.0);
    }
    return omega * acc * step / 3.0;
  }

  Kind kind_ = Kind::CateBinary;
  double nu_ = 0.5;
  double fd_step_ = 1e-4;
  ColumnOrConst omega_ = ColumnOrConst::constant(1.0);
  double kappa_ = 0.0;
  ColumnOrConst price_lo_ = ColumnOrConst::constant(0.0);
  ColumnOrConst price_hi_ = ColumnOrConst::constant(1.0);
  Index income_col_ = 0;
  int nodes_ = 201;
};

}  // namespace condml
