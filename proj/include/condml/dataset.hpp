#pragma once

#include "condml/common.hpp"

#include <stdexcept>
#include <string>
#include <utility>

namespace condml {

/// Columnar sample of observations W = (Y, D, Z) with the conditioning
/// variable V = T(Z) and the regressor X = (D, Z) (or Z alone). Immutable
/// after construction; ingestion rejects non-finite entries.
class Dataset {
 public:
  Dataset() = default;

  Dataset(VectorXd y, VectorXd d, MatrixXd z, MatrixXd v, bool x_includes_treatment = true)
      : y_(std::move(y)),
        d_(std::move(d)),
        z_(std::move(z)),
        v_(std::move(v)),
        x_includes_treatment_(x_includes_treatment) {
    const Index n = y_.size();
    if (d_.size() != n || z_.rows() != n || v_.rows() != n) {
      throw std::invalid_argument("dataset columns must share the same length");
    }
    if (v_.cols() < 1) throw std::invalid_argument("dataset needs at least one v column");
    if (z_.cols() < 1) throw std::invalid_argument("dataset needs at least one z column");
    if (!all_finite(y_) || !all_finite(d_) || !all_finite(z_) || !all_finite(v_)) {
      throw std::invalid_argument("dataset contains non-finite values");
    }
  }

  Index n() const { return y_.size(); }
  Index z_dim() const { return z_.cols(); }
  Index v_dim() const { return v_.cols(); }
  Index x_dim() const { return x_includes_treatment_ ? z_.cols() + 1 : z_.cols(); }
  bool x_includes_treatment() const { return x_includes_treatment_; }

  const VectorXd& y() const { return y_; }
  const VectorXd& d() const { return d_; }
  const MatrixXd& z() const { return z_; }
  const MatrixXd& v() const { return v_; }

  /// Regressor row. With treatment included the layout is (D, Z), so
  /// column 0 of X is always the treatment (or price) coordinate.
  void fill_x_row(Index i, VectorXd& out) const {
    out.resize(x_dim());
    if (x_includes_treatment_) {
      out[0] = d_[i];
      out.tail(z_.cols()) = z_.row(i).transpose();
    } else {
      out = z_.row(i).transpose();
    }
  }

  VectorXd x_row(Index i) const {
    VectorXd out;
    fill_x_row(i, out);
    return out;
  }

  VectorXd v_row(Index i) const { return v_.row(i).transpose(); }

  /// True when every treatment value is exactly 0 or 1.
  bool treatment_is_binary() const {
    for (Index i = 0; i < d_.size(); ++i) {
      if (d_[i] != 0.0 && d_[i] != 1.0) return false;
    }
    return true;
  }

  void require_binary_treatment() const {
    if (!treatment_is_binary()) {
      throw std::invalid_argument("binary-treatment functional requires d in {0,1}");
    }
  }

 private:
  VectorXd y_;
  VectorXd d_;
  MatrixXd z_;
  MatrixXd v_;
  bool x_includes_treatment_ = true;
};

}  // namespace condml
