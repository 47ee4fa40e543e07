#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "avsgd/problems.hpp"

namespace {

using avsgd::LogisticObjective;
using avsgd::Observation;
using avsgd::Point;
using avsgd::QuantileDirection;
using avsgd::QuantileObjective;

Point vec(std::initializer_list<double> xs) {
  Point p(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) p(i++) = x;
  return p;
}

Point random_point(avsgd::Rng &rng, Eigen::Index d, double scale = 1.0) {
  Point p(d);
  for (Eigen::Index i = 0; i < d; ++i) p(i) = scale * rng.normal();
  return p;
}

template <class Loss>
Point fd_gradient(Loss &&loss, const Point &h) {
  const double step = 1e-5 * (1.0 + h.norm());
  Point g(h.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    Point hp = h, hm = h;
    hp(i) += step;
    hm(i) -= step;
    g(i) = (loss(hp) - loss(hm)) / (2 * step);
  }
  return g;
}

TEST(LogisticGradient, AtZero) {
  const LogisticObjective obj(3);
  const Observation obs{vec({1, -2, 0.5}), 1};
  EXPECT_TRUE(obj.gradient(obs, Point::Zero(3)).isApprox(-0.5 * obs.features));
  const Observation neg{vec({1, 0}), -1};
  EXPECT_EQ(LogisticObjective(2).gradient(neg, Point::Zero(2)), vec({0.5, 0}));
}

TEST(LogisticGradient, LargeMargin) {
  const LogisticObjective obj(2);
  const Observation obs{vec({1, 0}), 1};
  const Point g = obj.gradient(obs, vec({20, 0}));
  // e^-20 / (1 + e^-20), 40-digit oracle.
  EXPECT_NEAR(-g(0), 2.0611536181902036e-9, 1e-21);
  EXPECT_EQ(g(1), 0.0);
}

TEST(LogisticGradient, NoOverflow) {
  const LogisticObjective obj(1);
  for (double m : {-1000.0, 1000.0}) {
    for (int y : {-1, 1}) {
      const Observation obs{vec({1}), y};
      EXPECT_TRUE(obj.gradient(obs, vec({m})).allFinite());
      EXPECT_TRUE(std::isfinite(obj.loss(obs, vec({m}))));
      EXPECT_TRUE(obj.hessian(obs, vec({m})).all_finite());
    }
  }
}

TEST(LogisticGradient, RequiresLabel) {
  const LogisticObjective obj(2);
  EXPECT_THROW(obj.gradient(Observation{vec({1, 0}), std::nullopt}, Point::Zero(2)),
               avsgd::DataError);
  EXPECT_THROW(obj.hessian(Observation{vec({1, 0}), std::nullopt}, Point::Zero(2)),
               avsgd::DataError);
  EXPECT_THROW(obj.gradient(Observation{vec({1, 0}), 0}, Point::Zero(2)), avsgd::DataError);
}

TEST(LogisticHessian, Values) {
  const LogisticObjective obj(2);
  const Observation obs{vec({2, 0}), 1};
  const auto h0 = obj.hessian(obs, Point::Zero(2));
  EXPECT_DOUBLE_EQ(h0(0, 0), 1.0);
  EXPECT_EQ(h0(0, 1), 0.0);
  EXPECT_EQ(h0(1, 1), 0.0);
  const Observation unit{vec({1, 0}), -1};
  // e^-20 / (1 + e^-20)^2, 40-digit oracle.
  for (double m : {-20.0, 20.0}) {
    EXPECT_NEAR(obj.hessian(unit, vec({m, 0}))(0, 0), 2.0611536139418493e-9, 1e-20) << m;
  }
}

TEST(LogisticGradient, FiniteDifferences) {
  avsgd::Rng rng(2);
  const Eigen::Index d = 5;
  const LogisticObjective obj(d);
  for (int t = 0; t < 100; ++t) {
    const Observation obs{random_point(rng, d), rng.uniform() < 0.5 ? 1 : -1};
    const Point h = random_point(rng, d);
    const Point g = obj.gradient(obs, h);
    const Point fd = fd_gradient([&](const Point &x) { return obj.loss(obs, x); }, h);
    EXPECT_LT((g - fd).norm() / g.norm(), 1e-6) << t;

    // Hessian against central differences of the gradient.
    const double step = 1e-5 * (1.0 + h.norm());
    Eigen::MatrixXd fd_h(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      Point hp = h, hm = h;
      hp(i) += step;
      hm(i) -= step;
      fd_h.col(i) = (obj.gradient(obs, hp) - obj.gradient(obs, hm)) / (2 * step);
    }
    const auto hess = obj.hessian(obs, h);
    EXPECT_LT((hess.matrix() - fd_h).norm() / hess.matrix().norm(), 1e-5) << t;
  }
}

TEST(QuantileGradient, Values) {
  const QuantileObjective med(QuantileDirection::median(2));
  EXPECT_TRUE(med.gradient(Observation{vec({3, 4}), {}}, Point::Zero(2)).isApprox(vec({-0.6, -0.8})));
  EXPECT_THROW(med.gradient(Observation{vec({1, 1}), {}}, vec({1, 1})), avsgd::Singularity);
  EXPECT_THROW(QuantileDirection(vec({0.6, 0.8})), avsgd::ConfigError);
}

TEST(QuantileGradient, NormBound) {
  avsgd::Rng rng(4);
  const QuantileObjective obj(QuantileDirection(vec({0.3, -0.2, 0.5})));
  for (int t = 0; t < 1000; ++t) {
    const Point g = obj.gradient(Observation{random_point(rng, 3), {}}, random_point(rng, 3));
    EXPECT_LE(g.norm(), 1.0 + obj.direction().norm() + 1e-15);
  }
}

TEST(QuantileGradient, FiniteDifferences) {
  avsgd::Rng rng(6);
  const Eigen::Index d = 4;
  int checked = 0;
  while (checked < 100) {
    const Point v = 0.6 * random_point(rng, d).normalized() * rng.uniform();
    const QuantileObjective obj{QuantileDirection(v)};
    const Observation obs{random_point(rng, d), {}};
    const Point h = random_point(rng, d);
    if ((obs.features - h).norm() < 0.1) continue;
    const Point g = obj.gradient(obs, h);
    const Point fd = fd_gradient([&](const Point &x) { return obj.loss(obs, x); }, h);
    EXPECT_LT((g - fd).norm() / g.norm(), 1e-6) << checked;
    ++checked;
  }
}

TEST(SphereSampler, UnitNormAndMoments) {
  const Eigen::Index d = 10;
  avsgd::SphereSampler sampler(d, 17);
  Point mean = Point::Zero(d);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto x = sampler.next()->features;
    ASSERT_NEAR(x.norm(), 1.0, 1e-12);
    mean += x;
    second.noalias() += x * x.transpose();
  }
  mean /= n;
  second /= n;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 5e-3);
  const Eigen::MatrixXd err = second - Eigen::MatrixXd::Identity(d, d) / d;
  EXPECT_LT(err.cwiseAbs().maxCoeff(), 0.01);
  Eigen::MatrixXd off = second;
  off.diagonal().setZero();
  EXPECT_LT(off.cwiseAbs().maxCoeff(), 0.01);
}

TEST(SphereSampler, RejectsLowDimension) {
  EXPECT_THROW(avsgd::SphereSampler(2, 1), avsgd::ConfigError);
}

TEST(LogisticSampler, FairCoinAtZero) {
  avsgd::LogisticSampler s(Point::Zero(3), avsgd::FeatureLaw::standard_normal, 8);
  int pos = 0;
  for (int i = 0; i < 100000; ++i) pos += *s.next()->label == 1;
  EXPECT_NEAR(pos / 1e5, 0.5, 0.01);
}

TEST(LogisticSampler, LargeMarginGivesPositive) {
  const Point theta = vec({100, 0});
  avsgd::LogisticSampler s(theta, avsgd::FeatureLaw::uniform_cube, 9);
  int checked = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto obs = *s.next();
    ASSERT_LE(obs.features.cwiseAbs().maxCoeff(), 1.0);
    if (obs.features.dot(theta) > 40) {
      EXPECT_EQ(*obs.label, 1);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(LogisticSampler, Deterministic) {
  avsgd::LogisticSampler a(vec({1, -1}), avsgd::FeatureLaw::standard_normal, 42);
  avsgd::LogisticSampler b(vec({1, -1}), avsgd::FeatureLaw::standard_normal, 42);
  for (int i = 0; i < 1000; ++i) {
    const auto x = *a.next(), y = *b.next();
    ASSERT_EQ(x.features, y.features);
    ASSERT_EQ(x.label, y.label);
  }
}

class CsvTest : public ::testing::Test {
 protected:
  std::string write(const std::string &name, const std::string &content) {
    const auto path = std::filesystem::temp_directory_path() / ("avsgd_csv_" + name);
    std::ofstream(path) << content;
    return path.string();
  }
};

TEST_F(CsvTest, ParsesLabelFirst) {
  avsgd::CsvStream s(write("basic.csv", "1,0.5,-0.2\n-1,0.1,0.9"), avsgd::CsvSchema{0, {}, false, false});
  const auto a = s.next();
  const auto b = s.next();
  ASSERT_TRUE(a && b);
  EXPECT_FALSE(s.next());
  EXPECT_EQ(a->label, 1);
  EXPECT_EQ(a->features, vec({0.5, -0.2}));
  EXPECT_EQ(b->label, -1);
  EXPECT_EQ(b->features, vec({0.1, 0.9}));
  EXPECT_EQ(*s.dimension(), 2);
}

TEST_F(CsvTest, NanIsParseErrorOnLine1) {
  avsgd::CsvStream s(write("nan.csv", "1,NaN,0.3\n"), avsgd::CsvSchema{0, {}, false, false});
  try {
    s.next();
    FAIL() << "expected ParseError";
  } catch (const avsgd::ParseError &e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST_F(CsvTest, EmptyFileIsEmptyStream) {
  avsgd::CsvStream s(write("empty.csv", ""), avsgd::CsvSchema{0, {}, false, false});
  EXPECT_FALSE(s.next());
}

TEST_F(CsvTest, HeaderRemapAndErrors) {
  avsgd::CsvStream s(write("hdr.csv", "x1,y,x2\r\n0.5,0,2\n1.5,1,3\n"),
                     avsgd::CsvSchema{1, {}, true, true});
  EXPECT_EQ(s.next()->label, -1);
  const auto b = s.next();
  EXPECT_EQ(b->label, 1);
  EXPECT_EQ(b->features, vec({1.5, 3}));

  avsgd::CsvStream bad_label(write("lab.csv", "2,1\n"), avsgd::CsvSchema{0, {}, false, false});
  EXPECT_THROW(bad_label.next(), avsgd::ParseError);

  avsgd::CsvStream ragged(write("rag.csv", "1,1,2\n-1,1\n"), avsgd::CsvSchema{0, {}, false, false});
  ragged.next();
  try {
    ragged.next();
    FAIL();
  } catch (const avsgd::ParseError &e) {
    EXPECT_EQ(e.line(), 2u);
  }

  avsgd::CsvStream cols(write("cols.csv", "9,1,2,3\n"), avsgd::CsvSchema{std::nullopt, {3, 1}, false, false});
  const auto c = cols.next();
  EXPECT_FALSE(c->label);
  EXPECT_EQ(c->features, vec({3, 1}));

  EXPECT_THROW(avsgd::CsvStream("/nonexistent/file.csv", {}), avsgd::IoError);
}

}  // namespace
