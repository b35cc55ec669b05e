#pragma once

#include "condml/common.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace condml {

enum class KernelFamily { Epanechnikov, Gaussian, Uniform };

inline std::string kernel_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::Epanechnikov: return "epanechnikov";
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::Uniform: return "uniform";
  }
  return "unknown";
}

inline KernelFamily kernel_from_name(const std::string& name) {
  if (name == "epanechnikov") return KernelFamily::Epanechnikov;
  if (name == "gaussian") return KernelFamily::Gaussian;
  if (name == "uniform") return KernelFamily::Uniform;
  throw std::invalid_argument("unknown kernel family: " + name);
}

/// Univariate kernel with unit integral; multivariate evaluation uses the
/// product construction K_h(u) = h^{-r} prod_j K(u_j / h).
struct Kernel {
  KernelFamily family = KernelFamily::Epanechnikov;

  /// Scalar kernel K(u). The Gaussian tail is cut at |u| > 8, where the mass
  /// beyond the cut is below 1e-14.
  double k(double u) const {
    switch (family) {
      case KernelFamily::Epanechnikov: {
        const double a = std::abs(u);
        return a >= 1.0 ? 0.0 : 0.75 * (1.0 - u * u);
      }
      case KernelFamily::Gaussian: {
        if (std::abs(u) > 8.0) return 0.0;
        return 0.3989422804014326779 * std::exp(-0.5 * u * u);
      }
      case KernelFamily::Uniform: {
        return std::abs(u) > 1.0 ? 0.0 : 0.5;
      }
    }
    return 0.0;
  }

  /// Radius beyond which K(u) is exactly zero.
  double support_radius() const {
    return family == KernelFamily::Gaussian ? 8.0 : 1.0;
  }

  /// K_h(u) = h^{-r} prod_j K(u_j / h) for an r-dimensional displacement u.
  double eval(const Eigen::Ref<const VectorXd>& u, double h) const {
    if (!(h > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
    const Index r = u.size();
    double prod = 1.0;
    for (Index j = 0; j < r; ++j) {
      prod *= k(u[j] / h);
      if (prod == 0.0) return 0.0;
    }
    return prod / std::pow(h, static_cast<double>(r));
  }

  double eval1(double u, double h) const {
    if (!(h > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
    return k(u / h) / h;
  }
};

inline double kernel_eval(const Kernel& kernel, const Eigen::Ref<const VectorXd>& u, double h) {
  return kernel.eval(u, h);
}

}  // namespace condml
