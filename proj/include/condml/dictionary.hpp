#pragma once

#include "condml/common.hpp"
#include "condml/dataset.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace condml {

/// One multiplicative factor of a basis function. Column indices refer to
/// the regressor row X; when X = (D, Z), column 0 is the treatment.
struct Factor {
  enum class Kind { Power, Spline, FourierSin, FourierCos, Treated, Control };

  Kind kind = Kind::Power;
  Index col = 0;
  int degree = 1;     // Power
  double knot = 0.0;  // Spline
  int freq = 1;       // Fourier

  double eval(const Eigen::Ref<const VectorXd>& x) const {
    switch (kind) {
      case Kind::Power: {
        double p = 1.0;
        for (int k = 0; k < degree; ++k) p *= x[col];
        return p;
      }
      case Kind::Spline:
        return std::max(0.0, x[col] - knot);
      case Kind::FourierSin:
        return std::sin(static_cast<double>(freq) * kPi * x[col]);
      case Kind::FourierCos:
        return std::cos(static_cast<double>(freq) * kPi * x[col]);
      case Kind::Treated:
        return x[0];
      case Kind::Control:
        return 1.0 - x[0];
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Power:
        return degree == 1 ? "x" + std::to_string(col)
                           : "x" + std::to_string(col) + "^" + std::to_string(degree);
      case Kind::Spline:
        return "sp(x" + std::to_string(col) + "," + std::to_string(knot) + ")";
      case Kind::FourierSin:
        return "sin(" + std::to_string(freq) + "pi*x" + std::to_string(col) + ")";
      case Kind::FourierCos:
        return "cos(" + std::to_string(freq) + "pi*x" + std::to_string(col) + ")";
      case Kind::Treated:
        return "d";
      case Kind::Control:
        return "(1-d)";
    }
    return "?";
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
};

/// Product of factors; an empty product is the constant function 1.
struct Term {
  std::vector<Factor> factors;

  double eval(const Eigen::Ref<const VectorXd>& x) const {
    double p = 1.0;
    for (const auto& f : factors) p *= f.eval(x);
    return p;
  }

  bool is_constant() const { return factors.empty(); }

  std::string name() const {
    if (factors.empty()) return "1";
    std::string out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (i) out += "*";
      out += factors[i].name();
    }
    return out;
  }
};

/// Declarative dictionary spec; evaluated against training rows when knots
/// are placed at sample quantiles. All column lists hold z indices (0-based
/// among the z columns); empty lists mean "all z columns".
struct DictionaryConfig {
  bool constant = true;
  bool treatment = true;            // raw treatment column as a term
  int degree = 1;                   // z-column powers 1..degree
  std::vector<Index> z_cols;        // columns receiving power terms
  bool treat_interactions = false;  // d * z_j terms over z_cols
  int spline_knots = 0;             // per spline column, at equispaced quantiles
  std::vector<Index> spline_cols;
  std::vector<Index> fourier_sin_cols;  // sin(k pi z_j), k = 1..fourier_freq
  int fourier_freq = 1;
  // Binary-treatment split basis: emit D, 1-D, and D/(1-D) crosses with every
  // z term instead of raw z terms (constant and raw columns would be
  // collinear with the split and are dropped).
  bool treat_control_basis = false;
};

/// Fixed collection of basis functions phi_1..phi_K over regressor rows.
class Dictionary {
 public:
  Dictionary() = default;
  explicit Dictionary(std::vector<Term> terms) : terms_(std::move(terms)) {
    if (terms_.empty()) throw std::invalid_argument("dictionary must have at least one term");
    for (std::size_t j = 0; j < terms_.size(); ++j) {
      if (terms_[j].is_constant()) constant_index_ = static_cast<Index>(j);
    }
  }

  Index size() const { return static_cast<Index>(terms_.size()); }
  const Term& term(Index j) const { return terms_[static_cast<std::size_t>(j)]; }
  Index constant_index() const { return constant_index_; }

  double eval(Index j, const Eigen::Ref<const VectorXd>& x) const {
    return terms_[static_cast<std::size_t>(j)].eval(x);
  }

  void eval_row(const Eigen::Ref<const VectorXd>& x, VectorXd& out) const {
    out.resize(size());
    for (Index j = 0; j < size(); ++j) out[j] = eval(j, x);
  }

  /// Feature matrix over the selected observation rows.
  MatrixXd features(const Dataset& ds, const std::vector<Index>& rows) const {
    MatrixXd phi(static_cast<Index>(rows.size()), size());
    VectorXd x;
    VectorXd row;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ds.fill_x_row(rows[i], x);
      eval_row(x, row);
      phi.row(static_cast<Index>(i)) = row.transpose();
    }
    return phi;
  }

  std::vector<Index> unpenalized_indices() const {
    if (constant_index_ < 0) return {};
    return {constant_index_};
  }

  std::vector<std::string> term_names() const {
    std::vector<std::string> names;
    names.reserve(terms_.size());
    for (const auto& t : terms_) names.push_back(t.name());
    return names;
  }

  class Builder {
   public:
    Builder& constant() {
      terms_.push_back(Term{});
      return *this;
    }
    Builder& power(Index x_col, int degree = 1) {
      terms_.push_back(Term{{Factor{Factor::Kind::Power, x_col, degree, 0.0, 1}}});
      return *this;
    }
    Builder& spline(Index x_col, double knot) {
      terms_.push_back(Term{{Factor{Factor::Kind::Spline, x_col, 1, knot, 1}}});
      return *this;
    }
    Builder& fourier_sin(Index x_col, int freq = 1) {
      terms_.push_back(Term{{Factor{Factor::Kind::FourierSin, x_col, 1, 0.0, freq}}});
      return *this;
    }
    Builder& fourier_cos(Index x_col, int freq = 1) {
      terms_.push_back(Term{{Factor{Factor::Kind::FourierCos, x_col, 1, 0.0, freq}}});
      return *this;
    }
    Builder& treated() {
      terms_.push_back(Term{{Factor{Factor::Kind::Treated}}});
      return *this;
    }
    Builder& control() {
      terms_.push_back(Term{{Factor{Factor::Kind::Control}}});
      return *this;
    }
    /// d * x_col (or (1-d) * x_col when on_control) product terms.
    Builder& treat_cross(Index x_col, bool on_control = false, int degree = 1) {
      Term t;
      t.factors.push_back(on_control ? Factor{Factor::Kind::Control} : Factor{Factor::Kind::Treated});
      t.factors.push_back(Factor{Factor::Kind::Power, x_col, degree, 0.0, 1});
      terms_.push_back(std::move(t));
      return *this;
    }
    Builder& term(Term t) {
      terms_.push_back(std::move(t));
      return *this;
    }
    std::shared_ptr<const Dictionary> build() const {
      return std::make_shared<const Dictionary>(terms_);
    }

   private:
    std::vector<Term> terms_;
  };

 private:
  std::vector<Term> terms_;
  Index constant_index_ = -1;
};

/// Knots at equispaced interior quantiles of one x column over training rows.
inline std::vector<double> quantile_knots(const Dataset& ds, const std::vector<Index>& rows,
                                          Index x_col, int count) {
  std::vector<double> values;
  values.reserve(rows.size());
  VectorXd x;
  for (Index i : rows) {
    ds.fill_x_row(i, x);
    values.push_back(x[x_col]);
  }
  std::sort(values.begin(), values.end());
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(count));
  for (int k = 1; k <= count; ++k) {
    const double q = static_cast<double>(k) / (count + 1.0);
    knots.push_back(quantile_sorted(values, q));
  }
  return knots;
}

/// Materialize a dictionary from a config, placing spline knots at quantiles
/// of the given training rows.
inline std::shared_ptr<const Dictionary> build_dictionary(const DictionaryConfig& cfg,
                                                          const Dataset& ds,
                                                          const std::vector<Index>& rows) {
  const Index z_off = ds.x_includes_treatment() ? 1 : 0;
  auto expand = [&](const std::vector<Index>& cols) {
    if (!cols.empty()) return cols;
    std::vector<Index> all;
    for (Index j = 0; j < ds.z_dim(); ++j) all.push_back(j);
    return all;
  };

  // Collect the z-side terms once; the split basis crosses each of them with
  // the treatment indicators instead of emitting them raw.
  std::vector<Term> z_terms;
  for (Index zj : expand(cfg.z_cols)) {
    for (int deg = 1; deg <= cfg.degree; ++deg) {
      z_terms.push_back(Term{{Factor{Factor::Kind::Power, z_off + zj, deg, 0.0, 1}}});
    }
  }
  if (cfg.spline_knots > 0) {
    for (Index zj : expand(cfg.spline_cols)) {
      for (double knot : quantile_knots(ds, rows, z_off + zj, cfg.spline_knots)) {
        z_terms.push_back(Term{{Factor{Factor::Kind::Spline, z_off + zj, 1, knot, 1}}});
      }
    }
  }
  for (Index zj : cfg.fourier_sin_cols) {
    for (int k = 1; k <= cfg.fourier_freq; ++k) {
      z_terms.push_back(Term{{Factor{Factor::Kind::FourierSin, z_off + zj, 1, 0.0, k}}});
    }
  }

  Dictionary::Builder b;
  if (cfg.treat_control_basis && ds.x_includes_treatment()) {
    b.treated();
    b.control();
    for (const Term& t : z_terms) {
      Term on_d = t;
      on_d.factors.insert(on_d.factors.begin(), Factor{Factor::Kind::Treated});
      b.term(std::move(on_d));
      Term on_c = t;
      on_c.factors.insert(on_c.factors.begin(), Factor{Factor::Kind::Control});
      b.term(std::move(on_c));
    }
    return b.build();
  }

  if (cfg.constant) b.constant();
  if (cfg.treatment && ds.x_includes_treatment()) b.treated();
  for (const Term& t : z_terms) b.term(t);
  if (cfg.treat_interactions && ds.x_includes_treatment()) {
    for (Index zj : expand(cfg.z_cols)) b.treat_cross(z_off + zj);
  }
  return b.build();
}

}  // namespace condml
