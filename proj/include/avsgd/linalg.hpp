#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>

#include "avsgd/error.hpp"

namespace avsgd {

/// An element of H = R^d.
using Point = Eigen::VectorXd;

inline bool all_finite(const Point &p) { return p.allFinite(); }

inline void require_finite(const Point &p, const char *what) {
  if (!p.allFinite()) {
    throw NumericError(std::string(what) + " has a non-finite entry");
  }
}

/// Dense symmetric d x d operator. Symmetry is exact: every mutator writes
/// (i,j) and (j,i) from the same value.
class SymOperator {
 public:
  SymOperator() = default;

  explicit SymOperator(Eigen::Index dim) : m_(Eigen::MatrixXd::Zero(dim, dim)) {}

  /// Symmetrizes `m` by copying its lower triangle onto the upper one.
  static SymOperator from_lower(const Eigen::MatrixXd &m) {
    if (m.rows() != m.cols()) {
      throw DataError("SymOperator requires a square matrix");
    }
    SymOperator out;
    out.m_ = m;
    out.mirror_lower();
    return out;
  }

  /// Averages `m` with its transpose.
  static SymOperator symmetrized(const Eigen::MatrixXd &m) {
    if (m.rows() != m.cols()) {
      throw DataError("SymOperator requires a square matrix");
    }
    SymOperator out;
    out.m_ = 0.5 * (m + m.transpose());
    out.mirror_lower();
    return out;
  }

  static SymOperator identity(Eigen::Index dim, double scale = 1.0) {
    SymOperator out(dim);
    out.m_.diagonal().setConstant(scale);
    return out;
  }

  /// u u^T, exactly symmetric because u_i * u_j == u_j * u_i in IEEE-754.
  static SymOperator outer(const Point &u) {
    SymOperator out;
    out.m_ = u * u.transpose();
    return out;
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Eigen::MatrixXd &matrix() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  /// this = shrink * this + u u^T.
  void shrink_add_outer(double shrink, const Point &u) {
    m_ *= shrink;
    m_.noalias() += u * u.transpose();
  }

  SymOperator &operator+=(const SymOperator &o) {
    m_ += o.m_;
    return *this;
  }

  SymOperator &operator*=(double a) {
    m_ *= a;
    return *this;
  }

  friend SymOperator operator*(double a, SymOperator s) {
    s *= a;
    return s;
  }

  friend SymOperator operator+(SymOperator a, const SymOperator &b) {
    a += b;
    return a;
  }

  double trace() const { return m_.trace(); }
  double frobenius_norm() const { return m_.norm(); }
  bool all_finite() const { return m_.allFinite(); }

  bool is_exactly_symmetric() const {
    for (Eigen::Index j = 0; j < m_.cols(); ++j) {
      for (Eigen::Index i = j + 1; i < m_.rows(); ++i) {
        if (m_(i, j) != m_(j, i)) return false;
      }
    }
    return true;
  }

  double min_eigenvalue() const {
    if (dim() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
  }

  double max_eigenvalue() const {
    if (dim() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(dim() - 1);
  }

  /// PSD up to rounding: min eigenvalue >= -rel_tol * |trace|.
  bool is_psd(double rel_tol = 1e-12) const {
    return min_eigenvalue() >= -rel_tol * std::abs(trace());
  }

  friend bool operator==(const SymOperator &a, const SymOperator &b) {
    return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
  }

  /// Raw storage for serialization; writers must keep symmetry.
  Eigen::MatrixXd &raw() { return m_; }

 private:
  void mirror_lower() {
    for (Eigen::Index j = 0; j < m_.cols(); ++j) {
      for (Eigen::Index i = j + 1; i < m_.rows(); ++i) m_(j, i) = m_(i, j);
    }
  }

  Eigen::MatrixXd m_;
};

}  // namespace avsgd
