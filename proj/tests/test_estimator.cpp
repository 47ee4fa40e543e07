#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "avsgd/baselines.hpp"
#include "avsgd/estimator.hpp"
#include "avsgd/random.hpp"

namespace {

using avsgd::EstimatorState;
using avsgd::Point;
using avsgd::StepParams;
using avsgd::SymOperator;

double rel_frobenius(const SymOperator &a, const SymOperator &b) {
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

Point random_point(avsgd::Rng &rng, Eigen::Index d) {
  Point p(d);
  for (Eigen::Index i = 0; i < d; ++i) p(i) = rng.normal();
  return p;
}

/// Random admissible (s, delta, mu) around alpha.
StepParams random_params(avsgd::Rng &rng) {
  StepParams p;
  p.c_gamma = 0.5 + rng.uniform();
  p.alpha = 0.55 + 0.4 * rng.uniform();
  const double s_lo = (1 + p.alpha) / 2;
  p.s = s_lo + (1 - s_lo) * (0.05 + 0.9 * rng.uniform());
  p.delta = p.s / 2 + 0.5 * (0.05 + 0.9 * rng.uniform());
  p.mu = rng.uniform() < 0.3 ? 0.0 : 3.0 * rng.uniform();
  return avsgd::validate(p);
}

TEST(Init, ZeroStart) {
  const auto st = EstimatorState::init(Point::Zero(3), StepParams{});
  EXPECT_EQ(st.n(), 1u);
  EXPECT_TRUE(st.m_current().isZero(0));
  EXPECT_TRUE(st.m_avg().isZero(0));
  EXPECT_TRUE(st.v_scaled().isZero(0));
  EXPECT_TRUE(st.sigma().matrix().isZero(0));
  EXPECT_EQ(st.sigma().dim(), 3);
}

TEST(Init, SinglePointAveragesToItself) {
  const Point m1 = (Point(2) << 1, 2).finished();
  const auto st = EstimatorState::init(m1, StepParams{});
  EXPECT_EQ(st.m_avg(), m1);
  EXPECT_TRUE(st.sigma().matrix().isZero(0));
  avsgd::baselines::Trajectory traj;
  traj.push(m1, m1);
  EXPECT_TRUE(avsgd::baselines::batch_sigma(traj, StepParams{}).matrix().isZero(0));
}

TEST(Init, RejectsNonFinite) {
  EXPECT_THROW(EstimatorState::init((Point(2) << 1, NAN).finished(), StepParams{}),
               avsgd::NumericError);
  StepParams bad;
  bad.s = 0.5;
  EXPECT_THROW(EstimatorState::init(Point::Zero(2), bad), avsgd::ConstraintViolation);
}

TEST(Step, HandEvaluatedFirstStep) {
  StepParams p;  // c=1, alpha=2/3, s=0.9, delta=0.7, mu=0
  auto st = EstimatorState::init(Point::Zero(1), p);
  st.step((Point(1) << -1.0).finished());
  EXPECT_EQ(st.n(), 2u);
  EXPECT_DOUBLE_EQ(st.m_current()(0), 1.0);
  EXPECT_DOUBLE_EQ(st.m_avg()(0), 0.5);
  EXPECT_DOUBLE_EQ(st.v_scaled()(0), 0.5);
  // (1 - delta) 2^{-(1+s)} * 0.25, 40-digit oracle.
  EXPECT_NEAR(st.sigma()(0, 0), 0.020095752422555497, 1e-16);
}

TEST(Step, ZeroGradientIsFixedPoint) {
  const Point m1 = (Point(3) << 0.3, -1, 2).finished();
  auto st = EstimatorState::init(m1, StepParams{});
  for (int i = 0; i < 1000; ++i) st.step(Point::Zero(3));
  EXPECT_EQ(st.m_current(), m1);
  EXPECT_TRUE((st.m_avg() - m1).isZero(1e-14));
  EXPECT_TRUE(st.sigma().matrix().isZero(1e-28));
}

TEST(Step, RejectsBadGradientWithoutMutating) {
  auto st = EstimatorState::init(Point::Zero(2), StepParams{});
  st.step((Point(2) << 1, 2).finished());
  const auto before = st;
  EXPECT_THROW(st.step((Point(2) << INFINITY, 0).finished()), avsgd::NumericError);
  EXPECT_THROW(st.step(Point::Zero(3)), avsgd::DataError);
  EXPECT_EQ(st, before);
}

TEST(Step, MatchesBatchOracleAcrossParameters) {
  avsgd::Rng rng(20240611);
  for (int trial = 0; trial < 12; ++trial) {
    const StepParams p = random_params(rng);
    const Eigen::Index d = 1 + trial % 4;
    const std::size_t n = 50 + 450 * (trial % 2);
    auto st = EstimatorState::init(random_point(rng, d), p);
    avsgd::baselines::Trajectory traj;
    traj.push(st.m_current(), st.m_avg());
    while (st.n() < n) {
      st.step(random_point(rng, d));
      traj.push(st.m_current(), st.m_avg());
    }
    const SymOperator oracle = avsgd::baselines::batch_sigma(traj, p);
    EXPECT_LT(rel_frobenius(st.sigma(), oracle), 1e-9)
        << "s=" << p.s << " delta=" << p.delta << " mu=" << p.mu;
  }
}

TEST(Step, SigmaIsExactlySymmetricAndPsd) {
  avsgd::Rng rng(7);
  auto st = EstimatorState::init(Point::Zero(6), StepParams{});
  for (int i = 0; i < 3000; ++i) {
    st.step(random_point(rng, 6));
    ASSERT_TRUE(st.sigma().is_exactly_symmetric()) << i;
    ASSERT_GE(st.sigma().min_eigenvalue(), -1e-12 * st.sigma().trace()) << i;
  }
}

TEST(Step, RunningMeanMatchesDirectMean) {
  avsgd::Rng rng(99);
  const Eigen::Index d = 3;
  auto st = EstimatorState::init(Point::Constant(d, 5.0), StepParams{});
  Point sum = st.m_current();
  for (int i = 0; i < 100000; ++i) {
    st.step(random_point(rng, d) + 0.01 * st.m_current());
    sum += st.m_current();
  }
  const Point direct = sum / static_cast<double>(st.n());
  EXPECT_LE((st.m_avg() - direct).norm(), 1e-10 * direct.norm());
}

TEST(Step, LongStreamStaysFinite) {
  StepParams p;
  p.s = 0.84;
  p.delta = 0.7;
  avsgd::Rng rng(3);
  auto st = EstimatorState::init(Point::Zero(2), p);
  for (int i = 0; i < 200000; ++i) st.step(random_point(rng, 2));
  EXPECT_TRUE(st.all_finite());
  EXPECT_TRUE(st.sigma().is_psd());
}

// Per-step cost must scale like d^2. d = 10 is dominated by fixed overhead, so
// it only bounds the curve from above.
TEST(Step, QuadraticCostInDimension) {
  auto time_steps = [](Eigen::Index d, int steps) {
    avsgd::Rng rng(1);
    auto st = EstimatorState::init(Point::Zero(d), StepParams{});
    std::vector<Point> grads;
    for (int i = 0; i < 8; ++i) grads.push_back(random_point(rng, d));
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < steps; ++i) st.step(grads[i % 8]);
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / steps;
  };
  time_steps(200, 50);  // warm-up
  const double t10 = time_steps(10, 20000);
  const double t100 = time_steps(100, 2000);
  const double t1000 = time_steps(1000, 40);
  const double c = t1000 / 1e6;  // quadratic fit anchored at the largest size
  EXPECT_LE(t100, 3.0 * c * 1e4) << t100 << " vs fit " << c * 1e4;
  EXPECT_GE(t100, c * 1e4 / 3.0) << t100 << " vs fit " << c * 1e4;
  EXPECT_LE(t10, 3.0 * c * 1e2 + 3.0 * t100 / 100.0 + 2e-6);
}

TEST(Merge, Identities) {
  avsgd::Rng rng(5);
  auto a = EstimatorState::init(Point::Zero(2), StepParams{});
  for (int i = 0; i < 50; ++i) a.step(random_point(rng, 2));
  std::vector<EstimatorState> one{a};
  EXPECT_EQ(avsgd::merge(std::span<const EstimatorState>(one)), a.sigma());
  std::vector<EstimatorState> two{a, a};
  EXPECT_TRUE((avsgd::merge(std::span<const EstimatorState>(two)).matrix() - a.sigma().matrix())
                  .isZero(1e-15));
}

TEST(Merge, ArithmeticMean) {
  auto a = EstimatorState::init(Point::Zero(2), StepParams{});
  auto b = a;
  a.step((Point(2) << 1, 0).finished());
  b.step((Point(2) << 0, 3).finished());
  std::vector<EstimatorState> states{a, b};
  const std::vector<double> w{0.5, 0.5};
  const auto m = avsgd::merge(std::span<const EstimatorState>(states), std::span<const double>(w));
  EXPECT_EQ(m.matrix(), (0.5 * a.sigma().matrix() + 0.5 * b.sigma().matrix()));

  // Sigmas 2I and 4I via restore of hand-built checkpoints.
  auto make = [](double v) {
    auto st = EstimatorState::init(Point::Zero(2), StepParams{});
    auto bytes = st.snapshot();
    const std::size_t sigma_at = bytes.size() - 4 * 8;
    for (int idx : {0, 3}) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) bytes[sigma_at + 8 * idx + k] = static_cast<std::uint8_t>(bits >> (8 * k));
    }
    return EstimatorState::restore(bytes);
  };
  std::vector<EstimatorState> pair{make(2.0), make(4.0)};
  EXPECT_EQ(avsgd::merge(std::span<const EstimatorState>(pair)), SymOperator::identity(2, 3.0));
}

TEST(Merge, Errors) {
  std::vector<EstimatorState> none;
  EXPECT_THROW(avsgd::merge(std::span<const EstimatorState>(none)), avsgd::DataError);
  std::vector<EstimatorState> mixed{EstimatorState::init(Point::Zero(2), StepParams{}),
                                    EstimatorState::init(Point::Zero(3), StepParams{})};
  EXPECT_THROW(avsgd::merge(std::span<const EstimatorState>(mixed)), avsgd::DataError);
  std::vector<EstimatorState> two{mixed[0], mixed[0]};
  const std::vector<double> bad{0.7, 0.7};
  EXPECT_THROW(avsgd::merge(std::span<const EstimatorState>(two), std::span<const double>(bad)),
               avsgd::DataError);
}

TEST(Snapshot, RoundTripIsBitIdentical) {
  avsgd::Rng rng(11);
  StepParams p;
  p.mu = 1.25;
  auto st = EstimatorState::init(random_point(rng, 4), p);
  for (int i = 0; i < 321; ++i) st.step(random_point(rng, 4));
  const auto bytes = st.snapshot();
  const auto back = EstimatorState::restore(bytes);
  EXPECT_EQ(back, st);
  EXPECT_EQ(back.snapshot(), bytes);
}

TEST(Snapshot, ResumeReproducesUninterruptedRun) {
  avsgd::Rng rng(12);
  std::vector<Point> grads;
  for (int i = 0; i < 999; ++i) grads.push_back(random_point(rng, 3));
  auto full = EstimatorState::init(Point::Zero(3), StepParams{});
  auto half = full;
  for (const auto &g : grads) full.step(g);
  for (int i = 0; i < 499; ++i) half.step(grads[i]);
  ASSERT_EQ(half.n(), 500u);
  auto resumed = EstimatorState::restore(half.snapshot());
  for (int i = 499; i < 999; ++i) resumed.step(grads[i]);
  EXPECT_EQ(resumed.n(), 1000u);
  EXPECT_EQ(resumed, full);
  EXPECT_TRUE(resumed.sigma().matrix() == full.sigma().matrix());
}

TEST(Snapshot, MalformedInput) {
  const auto st = EstimatorState::init(Point::Zero(2), StepParams{});
  auto bytes = st.snapshot();
  auto flipped = bytes;
  flipped[avsgd::snapshot_format::kVersionOffset] ^= 0xFF;
  EXPECT_THROW(EstimatorState::restore(flipped), avsgd::VersionMismatch);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(EstimatorState::restore(bad_magic), avsgd::SnapshotError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(EstimatorState::restore(truncated), avsgd::SnapshotError);
  EXPECT_THROW(EstimatorState::restore(std::span<const std::uint8_t>()), avsgd::SnapshotError);
}

TEST(Snapshot, LittleEndianHeader) {
  const auto st = EstimatorState::init(Point::Zero(3), StepParams{});
  const auto bytes = st.snapshot();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "AVSGDCKP");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
  EXPECT_EQ(bytes[12], 3);  // d
}

}  // namespace
