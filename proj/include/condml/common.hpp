#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace condml {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Thrown when a linear system that must be solved exactly is rank deficient.
class SingularSystemError : public std::runtime_error {
 public:
  explicit SingularSystemError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when an iterative fit fails to converge; carries the last iterate
/// so callers can inspect how far the solver got.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& msg, VectorXd last_iterate)
      : std::runtime_error(msg), last_iterate_(std::move(last_iterate)) {}
  const VectorXd& last_iterate() const { return last_iterate_; }

 private:
  VectorXd last_iterate_;
};

/// Thrown when a weighted Gram matrix is not positive definite enough to fit.
class IllPosedError : public std::runtime_error {
 public:
  explicit IllPosedError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown by bandwidth selection when every candidate produces all-flagged fits.
class NoValidBandwidthError : public std::runtime_error {
 public:
  explicit NoValidBandwidthError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on invalid run configuration; message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Empirical quantile with linear interpolation (type-7, the R default).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty vector");
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 < sorted.size()) {
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
  }
  return sorted[lo];
}

inline double quantile_of(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

inline double median_of(std::vector<double> values) {
  return quantile_of(std::move(values), 0.5);
}

inline double interquartile_range(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25);
}

inline double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

inline double stddev_of(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

/// Slope of the least-squares line of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("ols_slope: need two or more paired points");
  }
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("ols_slope: degenerate x");
  return sxy / sxx;
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Static-partition parallel map over [0, n_tasks). Each worker owns a
/// contiguous index block, so writes into per-index slots are race free and
/// results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n_tasks, unsigned threads, Fn&& fn) {
  const unsigned t = std::min<std::size_t>(resolve_threads(threads), n_tasks);
  if (t <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  pool.reserve(t);
  const std::size_t chunk = (n_tasks + t - 1) / t;
  for (unsigned w = 0; w < t; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n_tasks, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end]() {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace condml
