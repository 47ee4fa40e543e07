#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "avsgd/error.hpp"
#include "avsgd/estimator.hpp"
#include "avsgd/linalg.hpp"
#include "avsgd/schedule.hpp"

namespace avsgd::analysis {

/// Closed-form quantities for the geometric median of the uniform law on the
/// unit sphere of R^d, whose median is 0.
struct SphereReferences {
  Eigen::Index d = 0;
  SymOperator gamma_m;      // Hessian at the median, (d-1)/d I
  SymOperator sigma_prime;  // gradient covariance at the median, I/d
  SymOperator sigma_rm;     // non-averaged iterate, 1/(2(d-1)) I
  SymOperator sigma;        // averaged iterate, d/(d-1)^2 I
};

inline SphereReferences sphere_references(Eigen::Index d) {
  if (d < 3) throw ConfigError("sphere references require d >= 3");
  const double dd = static_cast<double>(d);
  return SphereReferences{
      d,
      SymOperator::identity(d, (dd - 1.0) / dd),
      SymOperator::identity(d, 1.0 / dd),
      SymOperator::identity(d, 1.0 / (2.0 * (dd - 1.0))),
      SymOperator::identity(d, dd / ((dd - 1.0) * (dd - 1.0))),
  };
}

/// sqrt(2(d-1)) n^{1/3} (m_n - m). Only meaningful for gamma_n = n^{-2/3}, so
/// any other step parameters are refused.
inline Point normalize_rm(const Point &m_n, const Point &m_true, std::uint64_t n,
                          Eigen::Index d, const StepParams &params) {
  if (std::abs(params.alpha - 2.0 / 3.0) > 1e-12 || params.c_gamma != 1.0) {
    throw ConfigError("Q_n normalization requires gamma_n = n^(-2/3) (c_gamma = 1, alpha = 2/3)");
  }
  if (d < 3) throw ConfigError("Q_n normalization requires d >= 3");
  if (m_n.size() != m_true.size()) throw DataError("normalize_rm: dimension mismatch");
  const double scale = std::sqrt(2.0 * static_cast<double>(d - 1)) *
                       std::cbrt(static_cast<double>(n));
  return scale * (m_n - m_true);
}

/// sqrt(n) (d-1)/sqrt(d) (mbar_n - m).
inline Point normalize_avg(const Point &m_avg, const Point &m_true, std::uint64_t n,
                           Eigen::Index d) {
  if (d < 3) throw ConfigError("Q_n' normalization requires d >= 3");
  if (m_avg.size() != m_true.size()) throw DataError("normalize_avg: dimension mismatch");
  const double dd = static_cast<double>(d);
  const double scale = std::sqrt(static_cast<double>(n)) * (dd - 1.0) / std::sqrt(dd);
  return scale * (m_avg - m_true);
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Asymptotic Kolmogorov survival function Q(lambda) = P(K > lambda).
///
/// For lambda >= 1.18 the alternating series 2 sum (-1)^{k-1} e^{-2 k^2 lambda^2}
/// is summed until a term drops below 1e-10. Below that the series converges
/// slowly, so the Jacobi-theta dual form
///   1 - sqrt(2 pi)/lambda sum_k e^{-(2k-1)^2 pi^2 / (8 lambda^2)}
/// is used instead.
inline double kolmogorov_survival(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  double p = 0.0;
  if (lambda < 1.18) {
    const double c = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
    double sum = 0.0;
    for (int k = 1; k < 100; ++k) {
      const double odd = 2.0 * k - 1.0;
      const double term = std::exp(-odd * odd * c);
      sum += term;
      if (term < 1e-16) break;
    }
    p = 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * sum;
  } else {
    double sign = 1.0;
    for (int k = 1; k < 100; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      p += sign * 2.0 * term;
      if (term < 1e-10) break;
      sign = -sign;
    }
  }
  return std::clamp(p, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t sample_size = 0;
};

/// One-sample two-sided Kolmogorov-Smirnov test against N(0, 1).
inline KsResult ks_normal(std::span<const double> samples) {
  if (samples.empty()) throw DataError("ks_normal on an empty sample");
  std::vector<double> sorted(samples.begin(), samples.end());
  for (double x : sorted) {
    if (std::isnan(x)) throw NumericError("ks_normal: NaN sample");
  }
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = normal_cdf(sorted[i]);
    const double above = static_cast<double>(i + 1) / n - f;
    const double below = f - static_cast<double>(i) / n;
    d = std::max({d, above, below});
  }
  return KsResult{d, kolmogorov_survival(std::sqrt(n) * d), sorted.size()};
}

inline double frobenius_error(const SymOperator &estimate, const SymOperator &truth) {
  if (estimate.dim() != truth.dim()) throw DataError("frobenius_error: dimension mismatch");
  return (estimate.matrix() - truth.matrix()).norm();
}

/// Regularized lower incomplete gamma P(a, x): power series for x < a + 1,
/// Lentz continued fraction for Q(a, x) otherwise.
inline double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0)) throw DataError("regularized_gamma_p needs a > 0");
  if (x <= 0.0) return 0.0;
  const double log_prefix = a * std::log(x) - x - std::lgamma(a);
  constexpr double eps = 1e-16;
  if (x < a + 1.0) {
    double ap = a;
    double term = 1.0 / a;
    double sum = term;
    for (int i = 0; i < 10000; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return std::min(1.0, sum * std::exp(log_prefix));
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double dd = 1.0 / b;
  double h = dd;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    dd = an * dd + b;
    if (std::abs(dd) < tiny) dd = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    dd = 1.0 / dd;
    const double delta = dd * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::max(0.0, 1.0 - std::exp(log_prefix) * h);
}

inline double chi_square_cdf(double x, double dof) { return regularized_gamma_p(0.5 * dof, 0.5 * x); }

inline double chi_square_pdf(double x, double dof) {
  if (x <= 0.0) return 0.0;
  const double k2 = 0.5 * dof;
  return std::exp((k2 - 1.0) * std::log(x) - 0.5 * x - k2 * std::numbers::ln2 - std::lgamma(k2));
}

/// Inverse chi-square CDF: bracket by doubling, then Newton steps that fall
/// back to bisection whenever they leave the bracket. Converges to ~1e-12
/// relative in x.
inline double chi_square_quantile(double p, double dof) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("chi-square quantile needs p in (0, 1)");
  if (!(dof > 0.0)) throw ConfigError("chi-square quantile needs dof > 0");
  double lo = 0.0;
  double hi = std::max(1.0, dof);
  while (chi_square_cdf(hi, dof) < p) {
    lo = hi;
    hi *= 2.0;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = chi_square_cdf(x, dof) - p;
    if (f < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    const double pdf = chi_square_pdf(x, dof);
    double next = pdf > 0.0 ? x - f / pdf : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-13 * std::max(1.0, x) || hi - lo <= 1e-13 * std::max(1.0, x)) {
      return next;
    }
    x = next;
  }
  return x;
}

enum class BallShape {
  /// Full quadratic form with Sigma_n.
  ellipsoid,
  /// Euclidean ball of squared radius q * lambda_max(Sigma_n) / n.
  sphere,
};

struct BallOptions {
  BallShape shape = BallShape::ellipsoid;
  /// Added to the diagonal of Sigma_n; default 1e-8 * trace(Sigma_n) / d.
  std::optional<double> ridge;
};

/// Asymptotic confidence region for the minimizer around the averaged
/// iterate: {theta : statistic(theta) <= mahalanobis_radius^2}.
class ConfidenceBall {
 public:
  ConfidenceBall(Point center, const SymOperator &sigma, std::uint64_t n, double level,
                 BallOptions options = {})
      : center_(std::move(center)), n_(n), shape_(options.shape) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must be in (0, 1)");
    if (sigma.dim() != center_.size()) throw DataError("confidence ball: dimension mismatch");
    if (n == 0) throw DataError("confidence ball needs n >= 1");
    const auto d = center_.size();
    const double ridge =
        options.ridge ? *options.ridge : 1e-8 * sigma.trace() / static_cast<double>(d);
    if (!(ridge >= 0.0)) throw ConfigError("confidence ball ridge must be nonnegative");
    Eigen::MatrixXd a = sigma.matrix();
    a.diagonal().array() += ridge;
    if (a.isZero(0.0)) throw NumericError("confidence ball: Sigma_n is zero and ridge is 0");
    if (shape_ == BallShape::ellipsoid) {
      llt_.compute(a);
      if (llt_.info() != Eigen::Success) {
        throw NumericError("confidence ball: Sigma_n + ridge I is not positive definite");
      }
    } else {
      lambda_max_ = SymOperator::symmetrized(a).max_eigenvalue();
      if (!(lambda_max_ > 0.0)) throw NumericError("confidence ball: lambda_max <= 0");
    }
    quantile_ = chi_square_quantile(level, static_cast<double>(d));
  }

  const Point &center() const { return center_; }
  double quantile() const { return quantile_; }
  double mahalanobis_radius() const { return std::sqrt(quantile_); }

  /// n (mbar_n - theta)^T (Sigma_n + ridge I)^{-1} (mbar_n - theta) for the
  /// ellipsoid, n ||mbar_n - theta||^2 / lambda_max for the sphere.
  double statistic(const Point &theta) const {
    if (theta.size() != center_.size()) throw DataError("confidence ball: dimension mismatch");
    const Point diff = center_ - theta;
    const double nd = static_cast<double>(n_);
    if (shape_ == BallShape::ellipsoid) return nd * diff.dot(llt_.solve(diff));
    return nd * diff.squaredNorm() / lambda_max_;
  }

  bool contains(const Point &theta) const { return statistic(theta) <= quantile_; }

 private:
  Point center_;
  std::uint64_t n_;
  BallShape shape_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double lambda_max_ = 0.0;
  double quantile_ = 0.0;
};

inline ConfidenceBall confidence_ball(const EstimatorState &state, double level,
                                      BallOptions options = {}) {
  return ConfidenceBall(state.m_avg(), state.sigma(), state.n(), level, options);
}

}  // namespace avsgd::analysis
