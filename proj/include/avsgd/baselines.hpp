#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "avsgd/error.hpp"
#include "avsgd/linalg.hpp"
#include "avsgd/problems.hpp"
#include "avsgd/schedule.hpp"

namespace avsgd::baselines {

/// Stored iterates m_1..m_n and their running means mbar_1..mbar_n.
struct Trajectory {
  std::vector<Point> iterates;
  std::vector<Point> averages;

  std::size_t size() const { return iterates.size(); }

  void push(const Point &iterate, const Point &average) {
    iterates.push_back(iterate);
    averages.push_back(average);
  }

  /// Builds the averages from cumulative sums of `iterates`.
  static Trajectory from_iterates(std::vector<Point> iterates) {
    Trajectory t;
    t.averages.reserve(iterates.size());
    if (!iterates.empty()) {
      Point sum = Point::Zero(iterates.front().size());
      for (std::size_t k = 0; k < iterates.size(); ++k) {
        sum += iterates[k];
        t.averages.push_back(sum / static_cast<double>(k + 1));
      }
    }
    t.iterates = std::move(iterates);
    return t;
  }
};

/// Literal double sums are O(n^2); they exist to check the recursion.
inline constexpr std::size_t kMaxBatchLength = 5000;

namespace detail {

inline void check_trajectory(const Trajectory &traj, std::size_t min_len) {
  if (traj.size() < min_len) {
    throw DataError("trajectory needs at least " + std::to_string(min_len) + " iterates");
  }
  if (traj.averages.size() != traj.iterates.size()) {
    throw DataError("trajectory iterates and averages differ in length");
  }
}

/// (1-delta)/n^{1-delta} sum_k k^{-(delta+s+mu)} e^{-k^{1-s}/(1-s)} U_k U_k^T,
///   U_k = sum_{j<=k} j^{mu/2} e^{j^{1-s}/(2(1-s))} diffs[j].
///
/// The weights of pair (k, j) are merged in log space: the outer factor equals
/// k^{-(delta+s)} exp(-2 log_weight(k)), so each inner weight enters as
/// exp(log_weight(j) - log_weight(k)) <= 1.
inline SymOperator weighted_double_sum(std::span<const Point> diffs, const StepParams &params) {
  const std::size_t n = diffs.size();
  const auto dim = diffs.front().size();
  std::vector<double> lw(n);
  for (std::size_t j = 0; j < n; ++j) lw[j] = log_weight(j + 1, params);

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
  Point u(dim);
  for (std::size_t k = 1; k <= n; ++k) {
    u.setZero();
    for (std::size_t j = 1; j <= k; ++j) u += std::exp(lw[j - 1] - lw[k - 1]) * diffs[j - 1];
    const double outer_w = std::pow(static_cast<double>(k), -(params.delta + params.s));
    const Point su = std::sqrt(outer_w) * u;
    acc.noalias() += su * su.transpose();
  }
  const double pre =
      (1.0 - params.delta) / std::pow(static_cast<double>(n), 1.0 - params.delta);
  return SymOperator::from_lower(pre * acc);
}

}  // namespace detail

/// Direct evaluation of the recursive estimator's closed form, where each
/// iterate is centred on the running mean available at its own time.
inline SymOperator batch_sigma(const Trajectory &traj, const StepParams &params) {
  validate(params);
  detail::check_trajectory(traj, 1);
  if (traj.size() > kMaxBatchLength) throw ConfigError("batch_sigma is capped at n <= 5000");
  std::vector<Point> diffs;
  diffs.reserve(traj.size());
  for (std::size_t j = 0; j < traj.size(); ++j) {
    diffs.push_back(traj.iterates[j] - traj.averages[j]);
  }
  return detail::weighted_double_sum(diffs, params);
}

/// Same double sum, but every iterate is centred on the final mean mbar_n.
inline SymOperator nonrecursive_sigma(const Trajectory &traj, const StepParams &params) {
  validate(params);
  detail::check_trajectory(traj, 1);
  if (traj.size() > kMaxBatchLength) {
    throw ConfigError("nonrecursive_sigma is capped at n <= 5000");
  }
  const Point &last = traj.averages.back();
  std::vector<Point> diffs;
  diffs.reserve(traj.size());
  for (const auto &m : traj.iterates) diffs.push_back(m - last);
  return detail::weighted_double_sum(diffs, params);
}

/// Scatter of the iterates about the final mean, divided by ln n.
inline SymOperator pelletier_sigma(const Trajectory &traj) {
  detail::check_trajectory(traj, 2);
  const Point &last = traj.averages.back();
  const auto dim = last.size();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto &m : traj.iterates) {
    const Point diff = m - last;
    acc.noalias() += diff * diff.transpose();
  }
  return SymOperator::from_lower(acc / std::log(static_cast<double>(traj.size())));
}

/// (Gamma + ridge I)^{-1} S (Gamma + ridge I)^{-1} by Cholesky solves.
inline SymOperator sandwich(const SymOperator &gamma_hat, const SymOperator &sigma_prime,
                            double ridge) {
  if (gamma_hat.dim() != sigma_prime.dim()) throw DataError("sandwich: dimension mismatch");
  if (!(ridge >= 0.0)) throw ConfigError("sandwich: ridge must be nonnegative");
  Eigen::MatrixXd a = gamma_hat.matrix();
  a.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw SingularHessian("empirical Hessian is not positive definite; use a ridge");
  }
  const Eigen::MatrixXd left = llt.solve(sigma_prime.matrix());
  const Eigen::MatrixXd full = llt.solve(left.transpose());
  return SymOperator::symmetrized(full);
}

/// Naive plug-in estimate: empirical Hessian and gradient second moment at
/// `h_ref`, combined as a sandwich. Without an explicit ridge the default
/// 1e-8 * trace(Gamma)/d is used.
template <ObjectiveWithHessian Obj>
SymOperator plugin_sandwich(const Obj &objective, std::span<const Observation> data,
                            const Point &h_ref, std::optional<double> ridge = std::nullopt) {
  if (data.empty()) throw DataError("plugin_sandwich needs at least one observation");
  const auto dim = objective.dimension();
  SymOperator gamma_hat(dim);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto &obs : data) {
    gamma_hat += objective.hessian(obs, h_ref);
    const Point g = objective.gradient(obs, h_ref);
    second.noalias() += g * g.transpose();
  }
  const double inv_n = 1.0 / static_cast<double>(data.size());
  gamma_hat *= inv_n;
  const SymOperator sigma_prime = SymOperator::from_lower(second * inv_n);
  const double r = ridge ? *ridge : 1e-8 * gamma_hat.trace() / static_cast<double>(dim);
  return sandwich(gamma_hat, sigma_prime, r);
}

}  // namespace avsgd::baselines
