#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "avsgd/error.hpp"
#include "avsgd/linalg.hpp"
#include "avsgd/schedule.hpp"

namespace avsgd {

/// Online state of averaged SGD together with the recursive estimate of the
/// asymptotic covariance of the averaged iterate.
///
/// The index n counts iterates: init() produces m_1 (n = 1) and every step()
/// consumes one gradient evaluated at m_n and produces m_{n+1}.
///
/// Instead of the exponentially weighted sum
///   V_n = sum_{j<=n} j^{mu/2} a_j (m_j - mbar_j)
/// the state keeps W_n = V_n / (n^{mu/2} a_n), which stays O(n^s) in size. In
/// that scale the covariance recursion reads
///   W_{n+1}     = r_n W_n + (m_{n+1} - mbar_{n+1}),   r_n = decay_ratio(n)
///   Sigma_{n+1} = (n/(n+1))^{1-delta} Sigma_n
///                 + (1-delta) (n+1)^{-(1+s)} W_{n+1} W_{n+1}^T
/// which unrolls exactly to the weighted double sum computed by
/// baselines::batch_sigma.
class EstimatorState {
 public:
  EstimatorState() = default;

  /// State at n = 1 with m_1 = mbar_1 = `start` and zero variance terms.
  static EstimatorState init(const Point &start, const StepParams &params) {
    require_finite(start, "initial point");
    EstimatorState st;
    st.params_ = validate(params);
    st.n_ = 1;
    st.m_current_ = start;
    st.m_avg_ = start;
    st.v_scaled_ = Point::Zero(start.size());
    st.sigma_ = SymOperator(start.size());
    return st;
  }

  /// Advances from n to n+1 using the stochastic gradient evaluated at m_n.
  /// On error the state is left untouched.
  void step(const Point &gradient) {
    if (n_ == 0) throw DataError("step on an uninitialized estimator");
    if (gradient.size() != m_current_.size()) {
      throw DataError("gradient dimension " + std::to_string(gradient.size()) +
                      " does not match state dimension " +
                      std::to_string(m_current_.size()));
    }
    require_finite(gradient, "gradient");

    const double nd = static_cast<double>(n_);
    const double np1 = nd + 1.0;

    Point m_next = m_current_ - gamma(n_, params_) * gradient;
    Point avg_next = m_avg_ + (m_next - m_avg_) / np1;
    Point w_next = decay_ratio(n_, params_) * v_scaled_ + (m_next - avg_next);

    const double one_minus_delta = 1.0 - params_.delta;
    const double shrink = std::exp(-one_minus_delta * std::log1p(1.0 / nd));
    const double coef = one_minus_delta * std::pow(np1, -(1.0 + params_.s));
    Point u = std::sqrt(coef) * w_next;

    if (!m_next.allFinite() || !avg_next.allFinite() || !u.allFinite()) {
      throw NumericError("non-finite value produced at n = " + std::to_string(n_ + 1));
    }

    sigma_.shrink_add_outer(shrink, u);
    m_current_ = std::move(m_next);
    m_avg_ = std::move(avg_next);
    v_scaled_ = std::move(w_next);
    ++n_;
  }

  std::uint64_t n() const { return n_; }
  Eigen::Index dim() const { return m_current_.size(); }
  const Point &m_current() const { return m_current_; }
  const Point &m_avg() const { return m_avg_; }
  const Point &v_scaled() const { return v_scaled_; }
  const SymOperator &sigma() const { return sigma_; }
  const StepParams &params() const { return params_; }

  bool all_finite() const {
    return m_current_.allFinite() && m_avg_.allFinite() && v_scaled_.allFinite() &&
           sigma_.all_finite();
  }

  /// Field-by-field bitwise-comparable equality (NaN-free states).
  friend bool operator==(const EstimatorState &a, const EstimatorState &b) {
    return a.n_ == b.n_ && a.params_ == b.params_ && a.dim() == b.dim() &&
           a.m_current_ == b.m_current_ && a.m_avg_ == b.m_avg_ &&
           a.v_scaled_ == b.v_scaled_ && a.sigma_ == b.sigma_;
  }

  std::vector<std::uint8_t> snapshot() const;
  static EstimatorState restore(std::span<const std::uint8_t> bytes);

 private:
  std::uint64_t n_ = 0;
  Point m_current_;
  Point m_avg_;
  Point v_scaled_;
  SymOperator sigma_;
  StepParams params_;
};

/// Weighted mean of the variance estimates of independent streams (the
/// split-and-average variant). Weights must be positive and sum to one.
inline SymOperator merge(std::span<const EstimatorState> states,
                         std::span<const double> weights) {
  if (states.empty()) throw DataError("merge of an empty list of states");
  if (weights.size() != states.size()) {
    throw DataError("merge: " + std::to_string(weights.size()) + " weights for " +
                    std::to_string(states.size()) + " states");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw DataError("merge weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DataError("merge weights must sum to 1");
  const auto dim = states.front().dim();
  SymOperator out(dim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].dim() != dim) throw DataError("merge: mismatched dimensions");
    if (!(states[i].params() == states.front().params())) {
      throw DataError("merge: states have different step parameters");
    }
    out += weights[i] * states[i].sigma();
  }
  return out;
}

/// Unweighted mean: sum in index order, then divide by the count.
inline SymOperator merge(std::span<const EstimatorState> states) {
  if (states.empty()) throw DataError("merge of an empty list of states");
  const auto dim = states.front().dim();
  SymOperator out(dim);
  for (const auto &st : states) {
    if (st.dim() != dim) throw DataError("merge: mismatched dimensions");
    if (!(st.params() == states.front().params())) {
      throw DataError("merge: states have different step parameters");
    }
    out += st.sigma();
  }
  out.raw() /= static_cast<double>(states.size());
  return out;
}

// Checkpoint layout, little-endian throughout:
//   magic "AVSGDCKP" | u32 version | u64 d | f64 c_gamma, alpha, s, delta, mu
//   | u64 n | f64[d] m_current | f64[d] m_avg | f64[d] v_scaled
//   | f64[d*d] sigma (row-major)
namespace snapshot_format {

inline constexpr char kMagic[8] = {'A', 'V', 'S', 'G', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kMagicOffset = 0;
inline constexpr std::size_t kVersionOffset = 8;
inline constexpr std::size_t kHeaderSize = 8 + 4 + 8 + 5 * 8 + 8;

class Writer {
 public:
  void bytes(const char *p, std::size_t len) { out_.insert(out_.end(), p, p + len); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t len) const {
    if (pos_ + len > in_.size()) throw SnapshotError("truncated checkpoint");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace snapshot_format

inline std::vector<std::uint8_t> EstimatorState::snapshot() const {
  using namespace snapshot_format;
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  const auto d = static_cast<std::uint64_t>(dim());
  w.u64(d);
  w.f64(params_.c_gamma);
  w.f64(params_.alpha);
  w.f64(params_.s);
  w.f64(params_.delta);
  w.f64(params_.mu);
  w.u64(n_);
  for (const Point *p : {&m_current_, &m_avg_, &v_scaled_}) {
    for (Eigen::Index i = 0; i < p->size(); ++i) w.f64((*p)(i));
  }
  for (Eigen::Index i = 0; i < dim(); ++i) {
    for (Eigen::Index j = 0; j < dim(); ++j) w.f64(sigma_(i, j));
  }
  return w.take();
}

inline EstimatorState EstimatorState::restore(std::span<const std::uint8_t> bytes) {
  using namespace snapshot_format;
  if (bytes.size() < kHeaderSize) throw SnapshotError("checkpoint shorter than header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw SnapshotError("bad checkpoint magic");
  }
  Reader r(bytes.subspan(sizeof kMagic));
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw VersionMismatch("checkpoint format version " + std::to_string(version) +
                          ", expected " + std::to_string(kVersion));
  }
  const std::uint64_t d = r.u64();
  StepParams params;
  params.c_gamma = r.f64();
  params.alpha = r.f64();
  params.s = r.f64();
  params.delta = r.f64();
  params.mu = r.f64();
  const std::uint64_t n = r.u64();
  // 3 vectors + one matrix of doubles must remain, exactly.
  if (d > (1u << 20) || r.remaining() != 8 * (3 * d + d * d)) {
    throw SnapshotError("checkpoint payload size does not match dimension");
  }
  EstimatorState st;
  try {
    st.params_ = validate(params);
  } catch (const ConstraintViolation &e) {
    throw SnapshotError(std::string("checkpoint carries invalid parameters: ") + e.what());
  }
  if (n == 0) throw SnapshotError("checkpoint with n = 0");
  st.n_ = n;
  const auto dim = static_cast<Eigen::Index>(d);
  for (Point *p : {&st.m_current_, &st.m_avg_, &st.v_scaled_}) {
    p->resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) (*p)(i) = r.f64();
  }
  st.sigma_ = SymOperator(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) st.sigma_.raw()(i, j) = r.f64();
  }
  if (!st.sigma_.is_exactly_symmetric()) throw SnapshotError("checkpoint sigma is not symmetric");
  if (!st.all_finite()) throw SnapshotError("checkpoint holds non-finite values");
  return st;
}

}  // namespace avsgd
