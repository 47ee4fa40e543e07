#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

#include "avsgd/error.hpp"

namespace avsgd {

/// Step and weight exponents.
///
/// The SGD step is gamma_n = c_gamma * n^-alpha. The variance recursion
/// weights iterate n by a_n * n^{mu/2} with a_n = exp(n^{1-s} / (2(1-s))),
/// and averages its outer products with a polynomial kernel governed by
/// delta. Admissible values satisfy
///
///   c_gamma > 0,  1/2 < alpha < 1,  (1+alpha)/2 < s < 1,
///   s/2 < delta < (1+s)/2,  mu >= 0,
///
/// all strict as written.
struct StepParams {
  double c_gamma = 1.0;
  double alpha = 2.0 / 3.0;
  double s = 0.9;
  double delta = 0.7;
  double mu = 0.0;

  friend bool operator==(const StepParams &, const StepParams &) = default;
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Returns `params` unchanged if every admissibility inequality holds,
/// otherwise throws ConstraintViolation naming the first one that fails.
inline StepParams validate(const StepParams &params) {
  using detail::fmt_double;
  const auto &p = params;
  if (!(std::isfinite(p.c_gamma) && std::isfinite(p.alpha) && std::isfinite(p.s) &&
        std::isfinite(p.delta) && std::isfinite(p.mu))) {
    throw ConstraintViolation("step parameters must be finite");
  }
  if (!(p.c_gamma > 0.0)) {
    throw ConstraintViolation("c_gamma > 0 violated: c_gamma = " + fmt_double(p.c_gamma));
  }
  if (!(p.alpha > 0.5)) {
    throw ConstraintViolation("alpha > 1/2 violated: alpha = " + fmt_double(p.alpha));
  }
  if (!(p.alpha < 1.0)) {
    throw ConstraintViolation("alpha < 1 violated: alpha = " + fmt_double(p.alpha));
  }
  const double s_lo = (1.0 + p.alpha) / 2.0;
  if (!(p.s > s_lo)) {
    throw ConstraintViolation("s > (1+alpha)/2 violated: s = " + fmt_double(p.s) +
                              " <= " + fmt_double(s_lo));
  }
  if (!(p.s < 1.0)) {
    throw ConstraintViolation("s < 1 violated: s = " + fmt_double(p.s));
  }
  const double d_lo = p.s / 2.0;
  const double d_hi = (1.0 + p.s) / 2.0;
  if (!(p.delta > d_lo)) {
    throw ConstraintViolation("delta > s/2 violated: delta = " + fmt_double(p.delta) +
                              " <= " + fmt_double(d_lo));
  }
  if (!(p.delta < d_hi)) {
    throw ConstraintViolation("delta < (1+s)/2 violated: delta = " +
                              fmt_double(p.delta) + " >= " + fmt_double(d_hi));
  }
  if (!(p.mu >= 0.0)) {
    throw ConstraintViolation("mu >= 0 violated: mu = " + fmt_double(p.mu));
  }
  return params;
}

/// gamma_n = c_gamma * n^-alpha.
inline double gamma(std::uint64_t n, const StepParams &p) {
  return p.c_gamma * std::pow(static_cast<double>(n), -p.alpha);
}

/// ln(a_n) + (mu/2) ln(n). The weight itself overflows for long streams and
/// is never formed.
inline double log_weight(std::uint64_t n, const StepParams &p) {
  const double nd = static_cast<double>(n);
  const double one_minus_s = 1.0 - p.s;
  double lw = std::pow(nd, one_minus_s) / (2.0 * one_minus_s);
  if (p.mu != 0.0) lw += 0.5 * p.mu * std::log(nd);
  return lw;
}

/// Ratio of consecutive weights, a_n n^{mu/2} / (a_{n+1} (n+1)^{mu/2}).
///
/// The power difference (n+1)^{1-s} - n^{1-s} is evaluated as
/// n^{1-s} * expm1((1-s) log1p(1/n)) to avoid cancellation at large n.
inline double decay_ratio(std::uint64_t n, const StepParams &p) {
  const double nd = static_cast<double>(n);
  const double one_minus_s = 1.0 - p.s;
  const double l1p = std::log1p(1.0 / nd);
  const double power_diff = std::pow(nd, one_minus_s) * std::expm1(one_minus_s * l1p);
  return std::exp(-power_diff / (2.0 * one_minus_s) - 0.5 * p.mu * l1p);
}

/// ln(b_n), b_n = sum_{k<=n} a_k^2, via a running log-sum-exp. mu is ignored:
/// b_n is defined on the bare exponential weights.
inline double log_weight_square_sum(std::uint64_t n, double s) {
  double acc = -INFINITY;
  for (std::uint64_t k = 1; k <= n; ++k) {
    const double term = std::pow(static_cast<double>(k), 1.0 - s) / (1.0 - s);
    if (acc == -INFINITY) {
      acc = term;
    } else if (term > acc) {
      acc = term + std::log1p(std::exp(acc - term));
    } else {
      acc = acc + std::log1p(std::exp(term - acc));
    }
  }
  return acc;
}

}  // namespace avsgd
