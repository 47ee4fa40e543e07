#pragma once

#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avsgd/error.hpp"
#include "avsgd/linalg.hpp"
#include "avsgd/random.hpp"
#include "avsgd/schedule.hpp"

namespace avsgd {

/// One data point: features X and, for classification objectives, a label
/// Y in {-1, +1}.
struct Observation {
  Point features;
  std::optional<int> label;
};

/// Anything that yields the stochastic gradient of a loss g(X, h) in h.
template <class T>
concept Objective = requires(const T &obj, const Observation &x, const Point &h) {
  { obj.gradient(x, h) } -> std::convertible_to<Point>;
  { obj.dimension() } -> std::convertible_to<Eigen::Index>;
};

template <class T>
concept ObjectiveWithHessian = Objective<T> && requires(const T &obj, const Observation &x,
                                                        const Point &h) {
  { obj.hessian(x, h) } -> std::convertible_to<SymOperator>;
};

/// Anything that yields observations one at a time; nullopt marks the end.
template <class T>
concept ObservationSource = requires(T &src) {
  { src.next() } -> std::same_as<std::optional<Observation>>;
};

namespace detail {

/// exp(-z) / (1 + exp(-z)) without overflow.
inline double sigmoid_of_neg(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

/// log(1 + exp(-z)) without overflow.
inline double softplus_of_neg(double z) {
  if (z > 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

}  // namespace detail

/// Logistic loss log(1 + exp(-Y <X, h>)).
class LogisticObjective {
 public:
  explicit LogisticObjective(Eigen::Index dim) : dim_(dim) {
    if (dim < 1) throw ConfigError("logistic objective needs dimension >= 1");
  }

  Eigen::Index dimension() const { return dim_; }

  double loss(const Observation &obs, const Point &h) const {
    return detail::softplus_of_neg(margin(obs, h));
  }

  Point gradient(const Observation &obs, const Point &h) const {
    const double z = margin(obs, h);
    return (-detail::sigmoid_of_neg(z) * static_cast<double>(*obs.label)) * obs.features;
  }

  SymOperator hessian(const Observation &obs, const Point &h) const {
    const double z = margin(obs, h);
    const double w = detail::sigmoid_of_neg(z) * detail::sigmoid_of_neg(-z);
    return SymOperator::outer(std::sqrt(w) * obs.features);
  }

 private:
  double margin(const Observation &obs, const Point &h) const {
    if (!obs.label) throw DataError("logistic objective requires a label");
    if (*obs.label != 1 && *obs.label != -1) throw DataError("logistic label must be -1 or +1");
    if (obs.features.size() != dim_ || h.size() != dim_) {
      throw DataError("logistic objective: dimension mismatch");
    }
    return static_cast<double>(*obs.label) * obs.features.dot(h);
  }

  Eigen::Index dim_;
};

/// A direction v with ||v|| < 1 selecting a geometric quantile.
class QuantileDirection {
 public:
  explicit QuantileDirection(Point v) : v_(std::move(v)) {
    require_finite(v_, "quantile direction");
    if (!(v_.norm() < 1.0)) throw ConfigError("quantile direction must satisfy ||v|| < 1");
  }

  static QuantileDirection median(Eigen::Index dim) {
    return QuantileDirection(Point::Zero(dim));
  }

  const Point &vector() const { return v_; }

 private:
  Point v_;
};

/// Geometric quantile loss ||X - h|| - ||X|| - <h, v>; v = 0 is the median.
class QuantileObjective {
 public:
  explicit QuantileObjective(QuantileDirection v) : v_(std::move(v)) {}

  Eigen::Index dimension() const { return v_.vector().size(); }
  const Point &direction() const { return v_.vector(); }

  /// Threshold on ||X - h|| below which the gradient is treated as singular.
  static double singular_threshold(const Point &h) { return 1e-12 * (1.0 + h.norm()); }

  double loss(const Observation &obs, const Point &h) const {
    check_dims(obs, h);
    return (obs.features - h).norm() - obs.features.norm() - h.dot(v_.vector());
  }

  Point gradient(const Observation &obs, const Point &h) const {
    check_dims(obs, h);
    Point diff = obs.features - h;
    const double norm = diff.norm();
    if (norm < singular_threshold(h)) {
      throw Singularity("quantile gradient undefined: observation coincides with h");
    }
    return -(diff / norm + v_.vector());
  }

  SymOperator hessian(const Observation &obs, const Point &h) const {
    check_dims(obs, h);
    const Point diff = obs.features - h;
    const double norm = diff.norm();
    if (norm < singular_threshold(h)) {
      throw Singularity("quantile hessian undefined: observation coincides with h");
    }
    // (I - u u^T) / ||X - h||
    SymOperator out = SymOperator::identity(dimension(), 1.0 / norm);
    out += -1.0 * SymOperator::outer(diff / (norm * std::sqrt(norm)));
    return out;
  }

 private:
  void check_dims(const Observation &obs, const Point &h) const {
    if (obs.features.size() != dimension() || h.size() != dimension()) {
      throw DataError("quantile objective: dimension mismatch");
    }
  }

  QuantileDirection v_;
};

/// Points uniform on the unit sphere of R^d (normalized standard normals).
class SphereSampler {
 public:
  SphereSampler(Eigen::Index dim, std::uint64_t seed) : dim_(dim), rng_(seed) {
    if (dim < 3) throw ConfigError("sphere sampler requires d >= 3");
  }

  Eigen::Index dimension() const { return dim_; }

  std::optional<Observation> next() {
    Point x(dim_);
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < dim_; ++i) x(i) = rng_.normal();
      norm = x.norm();
    } while (norm == 0.0);
    return Observation{x / norm, std::nullopt};
  }

 private:
  Eigen::Index dim_;
  Rng rng_;
};

enum class FeatureLaw { standard_normal, uniform_cube };

/// Well-specified logistic model: X from `law` (uniform_cube is [-1, 1]^d),
/// Y = +1 with probability 1 / (1 + exp(-<X, theta*>)).
class LogisticSampler {
 public:
  LogisticSampler(Point theta_star, FeatureLaw law, std::uint64_t seed)
      : theta_(std::move(theta_star)), law_(law), rng_(seed) {
    require_finite(theta_, "theta_star");
  }

  Eigen::Index dimension() const { return theta_.size(); }

  std::optional<Observation> next() {
    Point x(theta_.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x(i) = law_ == FeatureLaw::standard_normal ? rng_.normal() : 2.0 * rng_.uniform() - 1.0;
    }
    const double p_pos = detail::sigmoid_of_neg(-x.dot(theta_));
    const int y = rng_.uniform() < p_pos ? 1 : -1;
    return Observation{std::move(x), y};
  }

 private:
  Point theta_;
  FeatureLaw law_;
  Rng rng_;
};

struct CsvSchema {
  /// 0-based column holding the label; none for unlabeled data.
  std::optional<std::size_t> label_column;
  /// Feature columns in order; empty means every non-label column.
  std::vector<std::size_t> feature_columns;
  bool has_header = false;
  /// Accept {0, 1} labels and map 0 to -1.
  bool remap_zero_one = false;
};

/// Single-pass reader of comma-separated observations.
class CsvStream {
 public:
  CsvStream(const std::string &path, CsvSchema schema)
      : path_(path), schema_(std::move(schema)), in_(path) {
    if (!in_) throw IoError("cannot open " + path);
  }

  /// Feature dimension; known after the first data row has been read.
  std::optional<Eigen::Index> dimension() const { return dim_; }

  std::optional<Observation> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line_no_ == 1 && schema_.has_header) continue;
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      return parse_row(line);
    }
    if (in_.bad()) throw IoError("read failure on " + path_);
    return std::nullopt;
  }

 private:
  static double parse_double(std::string_view cell, std::size_t line) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
      throw ParseError(line, "cannot parse '" + std::string(cell) + "' as a number");
    }
    if (!std::isfinite(v)) throw ParseError(line, "non-finite value '" + std::string(cell) + "'");
    return v;
  }

  Observation parse_row(const std::string &line) {
    std::vector<double> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const auto end = comma == std::string::npos ? line.size() : comma;
      cells.push_back(parse_double(std::string_view(line).substr(start, end - start), line_no_));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }

    Observation obs;
    if (schema_.label_column) {
      const auto lc = *schema_.label_column;
      if (lc >= cells.size()) throw ParseError(line_no_, "label column out of range");
      const double raw = cells[lc];
      int y = 0;
      if (raw == 1.0) {
        y = 1;
      } else if (raw == -1.0 && !schema_.remap_zero_one) {
        y = -1;
      } else if (raw == 0.0 && schema_.remap_zero_one) {
        y = -1;
      } else {
        throw ParseError(line_no_, "invalid label " + detail::fmt_double(raw));
      }
      obs.label = y;
    }

    std::vector<double> feats;
    if (schema_.feature_columns.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (schema_.label_column && i == *schema_.label_column) continue;
        feats.push_back(cells[i]);
      }
    } else {
      for (std::size_t c : schema_.feature_columns) {
        if (c >= cells.size()) throw ParseError(line_no_, "feature column out of range");
        feats.push_back(cells[c]);
      }
    }
    const auto dim = static_cast<Eigen::Index>(feats.size());
    if (dim_ && *dim_ != dim) {
      throw ParseError(line_no_, "row has " + std::to_string(dim) + " features, expected " +
                                     std::to_string(*dim_));
    }
    if (dim == 0) throw ParseError(line_no_, "row has no feature columns");
    dim_ = dim;
    obs.features = Eigen::Map<const Point>(feats.data(), dim);
    return obs;
  }

  std::string path_;
  CsvSchema schema_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
  std::optional<Eigen::Index> dim_;
};

}  // namespace avsgd
