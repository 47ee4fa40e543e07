#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "avsgd/analysis.hpp"
#include "avsgd/error.hpp"
#include "avsgd/estimator.hpp"
#include "avsgd/linalg.hpp"
#include "avsgd/problems.hpp"
#include "avsgd/random.hpp"
#include "avsgd/schedule.hpp"

namespace avsgd::experiment {

inline constexpr const char *kCodeVersion = "0.1.0";

enum class Problem { sphere_median, geometric_quantile, logistic_synthetic, logistic_csv };
enum class OutputFormat { jsonl, csv };

struct CheckpointSpec {
  /// Geometric grid density, used when `points` is empty.
  int points_per_decade = 10;
  /// Explicit checkpoints (total iterate counts); overrides the grid.
  std::vector<std::uint64_t> points;
};

/// Everything that defines a run. Iterate counts follow the estimator: n
/// counts m_1..m_n, where m_1 is the starting point, so reaching n consumes
/// n - 1 observations per stream.
struct RunConfig {
  Problem problem = Problem::sphere_median;
  /// 0 lets logistic_csv take the dimension from the file.
  Eigen::Index d = 10;
  std::uint64_t n_total = 5000;
  StepParams params;
  std::uint64_t seed = 0;
  std::uint32_t replications = 1;
  std::uint32_t splits = 1;
  CheckpointSpec checkpoints;
  std::optional<Point> direction;
  std::optional<Point> theta_star;
  std::optional<Point> init;
  FeatureLaw feature_law = FeatureLaw::standard_normal;
  std::optional<std::string> input_path;
  CsvSchema csv{std::size_t{0}, {}, false, false};
  std::string output_path = "avsgd-out";
  OutputFormat format = OutputFormat::jsonl;
  bool residuals = false;
  double level = 0.95;
  /// Worker threads; 0 means hardware concurrency.
  unsigned threads = 0;
  /// Adds wall_time_ms to metric rows. Timings make outputs non-reproducible.
  bool timings = false;
};

struct MetricsRecord {
  std::uint64_t n = 0;
  std::uint32_t replication = 0;
  std::optional<double> frob_err_sq;
  std::optional<double> param_err_sq;
  std::optional<analysis::KsResult> ks_rm;
  std::optional<analysis::KsResult> ks_avg;
  std::optional<bool> coverage_hit;
  /// Observations dropped at a gradient singularity so far.
  std::uint64_t skipped = 0;
  std::optional<double> wall_time_ms;
};

/// One component of the normalized residuals Q_n and Q_n'.
struct ResidualRow {
  std::uint64_t n = 0;
  std::uint32_t replication = 0;
  Eigen::Index component = 0;
  std::optional<double> q_rm;
  double q_avg = 0.0;
};

struct SummaryRow {
  std::uint64_t n = 0;
  std::size_t replications = 0;
  std::optional<double> mean_frob_err_sq;
  std::optional<double> median_frob_err_sq;
  std::optional<double> mean_param_err_sq;
  std::optional<double> coverage_rate;
  std::optional<double> ks_rm_pass_rate;
  std::optional<double> ks_avg_pass_rate;
};

/// Per-checkpoint view of one replication, handed to an optional observer.
struct CheckpointView {
  std::uint32_t replication;
  std::uint64_t n;
  std::span<const EstimatorState> splits;
  const SymOperator &merged_sigma;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  std::vector<ResidualRow> residuals;
  std::vector<SummaryRow> summary;
  std::vector<std::uint64_t> checkpoints;
};

inline const char *to_string(Problem p) {
  switch (p) {
    case Problem::sphere_median: return "sphere_median";
    case Problem::geometric_quantile: return "geometric_quantile";
    case Problem::logistic_synthetic: return "logistic_synthetic";
    case Problem::logistic_csv: return "logistic_csv";
  }
  return "?";
}

inline Problem problem_from_string(const std::string &s) {
  for (Problem p : {Problem::sphere_median, Problem::geometric_quantile,
                    Problem::logistic_synthetic, Problem::logistic_csv}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError("unknown problem '" + s + "'");
}

inline const char *to_string(OutputFormat f) { return f == OutputFormat::jsonl ? "jsonl" : "csv"; }

inline OutputFormat format_from_string(const std::string &s) {
  if (s == "jsonl" || s == "json-lines") return OutputFormat::jsonl;
  if (s == "csv") return OutputFormat::csv;
  throw ConfigError("unknown output format '" + s + "'");
}

inline const char *to_string(FeatureLaw f) {
  return f == FeatureLaw::standard_normal ? "standard_normal" : "uniform_cube";
}

inline FeatureLaw feature_law_from_string(const std::string &s) {
  if (s == "standard_normal") return FeatureLaw::standard_normal;
  if (s == "uniform_cube") return FeatureLaw::uniform_cube;
  throw ConfigError("unknown feature law '" + s + "'");
}

/// True when the Q_n normalization applies (gamma_n = n^{-2/3}).
inline bool rm_normalizable(const StepParams &p) {
  return std::abs(p.alpha - 2.0 / 3.0) <= 1e-12 && p.c_gamma == 1.0;
}

inline void validate(const RunConfig &cfg) {
  avsgd::validate(cfg.params);
  if (cfg.n_total == 0) throw ConfigError("n_total must be positive");
  if (cfg.replications == 0) throw ConfigError("replications must be >= 1");
  if (cfg.splits == 0) throw ConfigError("splits must be >= 1");
  if (cfg.n_total < cfg.splits) throw ConfigError("n_total must be at least splits");
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw ConfigError("level must be in (0, 1)");
  if (cfg.checkpoints.points.empty() && cfg.checkpoints.points_per_decade < 1) {
    throw ConfigError("points_per_decade must be >= 1");
  }
  for (auto c : cfg.checkpoints.points) {
    if (c < cfg.splits || c > cfg.n_total) {
      throw ConfigError("checkpoint " + std::to_string(c) + " outside [splits, n_total]");
    }
  }

  const bool csv = cfg.problem == Problem::logistic_csv;
  if (!csv && cfg.d < 1) throw ConfigError("d must be >= 1");
  if ((cfg.problem == Problem::sphere_median || cfg.problem == Problem::geometric_quantile) &&
      cfg.d < 3) {
    throw ConfigError("sphere problems require d >= 3");
  }
  if ((cfg.problem == Problem::geometric_quantile) != cfg.direction.has_value()) {
    throw ConfigError("direction must be given exactly when problem = geometric_quantile");
  }
  if (cfg.direction) {
    if (cfg.direction->size() != cfg.d) throw ConfigError("direction has wrong dimension");
    QuantileDirection check(*cfg.direction);
  }
  if (cfg.problem == Problem::logistic_synthetic) {
    if (!cfg.theta_star) throw ConfigError("logistic_synthetic requires theta_star");
    if (cfg.theta_star->size() != cfg.d) throw ConfigError("theta_star has wrong dimension");
    require_finite(*cfg.theta_star, "theta_star");
  } else if (cfg.theta_star) {
    throw ConfigError("theta_star is only used by logistic_synthetic");
  }
  if (csv != cfg.input_path.has_value()) {
    throw ConfigError("input_path must be given exactly when problem = logistic_csv");
  }
  if (csv && cfg.replications != 1) throw ConfigError("logistic_csv supports one replication");
  if (csv && !cfg.csv.label_column) throw ConfigError("logistic_csv needs a label column");
  if (cfg.init && !csv && cfg.init->size() != cfg.d) {
    throw ConfigError("init has wrong dimension");
  }
  if (cfg.init) require_finite(*cfg.init, "init");
  if (cfg.residuals) {
    if (cfg.problem != Problem::sphere_median) {
      throw ConfigError("residual dumps need a known minimizer (sphere_median)");
    }
    if (cfg.splits != 1) throw ConfigError("residual dumps require splits = 1");
    if (!rm_normalizable(cfg.params)) {
      throw ConfigError("Q_n normalization requires c_gamma = 1 and alpha = 2/3");
    }
  }
}

/// Sorted, deduplicated checkpoints (total iterate counts). The grid is
/// round(10^{k/ppd}) restricted to [max(10, splits), n_total], and always
/// ends at n_total. With splits p each stream reaches floor(c/p) iterates,
/// so c is rounded down to a multiple of p.
inline std::vector<std::uint64_t> checkpoint_schedule(const CheckpointSpec &spec,
                                                      std::uint64_t n_total,
                                                      std::uint32_t splits) {
  std::vector<std::uint64_t> raw = spec.points;
  if (raw.empty()) {
    const std::uint64_t lo = std::max<std::uint64_t>(10, splits);
    for (int k = 0;; ++k) {
      const double v = std::round(std::pow(10.0, static_cast<double>(k) / spec.points_per_decade));
      if (v > static_cast<double>(n_total)) break;
      const auto c = static_cast<std::uint64_t>(v);
      if (c >= lo) raw.push_back(c);
    }
    raw.push_back(n_total);
  }
  std::vector<std::uint64_t> out;
  for (auto c : raw) {
    const std::uint64_t per = c / splits;
    if (per >= 1) out.push_back(per * splits);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace detail {

using Source = std::variant<SphereSampler, LogisticSampler>;
using AnyObjective = std::variant<QuantileObjective, LogisticObjective>;

inline AnyObjective make_objective(const RunConfig &cfg, Eigen::Index d) {
  switch (cfg.problem) {
    case Problem::sphere_median: return QuantileObjective(QuantileDirection::median(d));
    case Problem::geometric_quantile: return QuantileObjective(QuantileDirection(*cfg.direction));
    default: return LogisticObjective(d);
  }
}

inline Source make_source(const RunConfig &cfg, std::uint64_t seed) {
  if (cfg.problem == Problem::logistic_synthetic) {
    return LogisticSampler(*cfg.theta_star, cfg.feature_law, seed);
  }
  return SphereSampler(cfg.d, seed);
}

inline std::optional<Point> known_minimizer(const RunConfig &cfg) {
  switch (cfg.problem) {
    case Problem::sphere_median: return Point::Zero(cfg.d);
    case Problem::logistic_synthetic: return *cfg.theta_star;
    default: return std::nullopt;
  }
}

inline std::optional<SymOperator> known_sigma(const RunConfig &cfg) {
  if (cfg.problem == Problem::sphere_median) return analysis::sphere_references(cfg.d).sigma;
  return std::nullopt;
}

struct ReplicationOutput {
  std::vector<MetricsRecord> records;
  std::vector<ResidualRow> residuals;
};

using Observer = std::function<void(const CheckpointView &)>;

/// Feeds one observation into `state`; returns false when the gradient was
/// singular and the observation was dropped.
inline bool feed(EstimatorState &state, const AnyObjective &objective, const Observation &obs) {
  Point g;
  try {
    g = std::visit([&](const auto &o) { return Point(o.gradient(obs, state.m_current())); },
                   objective);
  } catch (const Singularity &) {
    return false;
  }
  state.step(g);
  return true;
}

template <class NextFor>
ReplicationOutput run_streams(const RunConfig &cfg, Eigen::Index d, std::uint32_t replication,
                              const std::vector<std::uint64_t> &checkpoints, NextFor &&next_for,
                              const Observer &observer) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const AnyObjective objective = make_objective(cfg, d);
  const Point start = cfg.init ? *cfg.init : Point::Zero(d);
  std::vector<EstimatorState> states;
  for (std::uint32_t k = 0; k < cfg.splits; ++k) states.push_back(EstimatorState::init(start, cfg.params));

  const auto m_true = known_minimizer(cfg);
  const auto sigma_true = known_sigma(cfg);
  const bool sphere_ks = cfg.problem == Problem::sphere_median && cfg.splits == 1;

  ReplicationOutput out;
  std::uint64_t skipped = 0;
  for (const auto c : checkpoints) {
    const std::uint64_t target = c / cfg.splits;
    while (states.front().n() < target) {
      for (std::uint32_t k = 0; k < cfg.splits; ++k) {
        while (true) {
          const Observation obs = next_for(k);
          if (feed(states[k], objective, obs)) break;
          ++skipped;
        }
      }
    }

    const SymOperator merged = merge(std::span<const EstimatorState>(states));
    Point pooled = Point::Zero(d);
    std::uint64_t n_pooled = 0;
    for (const auto &st : states) {
      pooled += st.m_avg();
      n_pooled += st.n();
    }
    pooled /= static_cast<double>(cfg.splits);

    MetricsRecord rec;
    rec.n = n_pooled;
    rec.replication = replication;
    rec.skipped = skipped;
    if (sigma_true) {
      const double e = analysis::frobenius_error(merged, *sigma_true);
      rec.frob_err_sq = e * e;
    }
    if (m_true) {
      rec.param_err_sq = (pooled - *m_true).squaredNorm();
      if (!merged.matrix().isZero(0.0)) {
        const analysis::ConfidenceBall ball(pooled, merged, n_pooled, cfg.level);
        rec.coverage_hit = ball.contains(*m_true);
      }
    }
    if (sphere_ks) {
      const auto &st = states.front();
      const Point q_avg = analysis::normalize_avg(st.m_avg(), *m_true, st.n(), d);
      rec.ks_avg = analysis::ks_normal(std::span<const double>(q_avg.data(), q_avg.size()));
      std::optional<Point> q_rm;
      if (rm_normalizable(cfg.params)) {
        q_rm = analysis::normalize_rm(st.m_current(), *m_true, st.n(), d, cfg.params);
        rec.ks_rm = analysis::ks_normal(std::span<const double>(q_rm->data(), q_rm->size()));
      }
      if (cfg.residuals) {
        for (Eigen::Index i = 0; i < d; ++i) {
          out.residuals.push_back(ResidualRow{st.n(), replication, i,
                                              q_rm ? std::optional<double>((*q_rm)(i)) : std::nullopt,
                                              q_avg(i)});
        }
      }
    }
    if (cfg.timings) {
      rec.wall_time_ms =
          std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
    if (observer) observer(CheckpointView{replication, n_pooled, states, merged});
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline ReplicationOutput run_synthetic(const RunConfig &cfg, std::uint32_t replication,
                                       const std::vector<std::uint64_t> &checkpoints,
                                       const Observer &observer) {
  std::vector<Source> sources;
  for (std::uint32_t k = 0; k < cfg.splits; ++k) {
    sources.push_back(make_source(cfg, derive_seed(cfg.seed, {replication, k})));
  }
  auto next_for = [&](std::uint32_t k) {
    return *std::visit([](auto &s) { return s.next(); }, sources[k]);
  };
  return run_streams(cfg, cfg.d, replication, checkpoints, next_for, observer);
}

inline ReplicationOutput run_csv(const RunConfig &cfg, const std::vector<std::uint64_t> &checkpoints,
                                 const Observer &observer) {
  CsvStream stream(*cfg.input_path, cfg.csv);
  // The first row fixes the dimension; it is buffered and replayed.
  std::optional<Observation> pending = stream.next();
  if (!pending) throw DataError("input file holds no observations");
  const Eigen::Index d = pending->features.size();
  if (cfg.d != 0 && cfg.d != d) {
    throw DataError("input has " + std::to_string(d) + " features, config says d = " +
                    std::to_string(cfg.d));
  }
  if (cfg.init && cfg.init->size() != d) throw ConfigError("init has wrong dimension");
  // Round-robin: the k-th row read within a sweep goes to split k.
  auto next_for = [&](std::uint32_t) {
    if (pending) {
      Observation obs = std::move(*pending);
      pending.reset();
      return obs;
    }
    auto obs = stream.next();
    if (!obs) throw DataError("input exhausted before n_total was reached");
    return std::move(*obs);
  };
  return run_streams(cfg, d, 0, checkpoints, next_for, observer);
}

inline double mean_of_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace detail

/// Aggregates records per checkpoint across replications. Values are sorted
/// before summation, so the result does not depend on replication order.
inline std::vector<SummaryRow> summarize(const std::vector<MetricsRecord> &records) {
  std::map<std::uint64_t, std::vector<const MetricsRecord *>> by_n;
  for (const auto &r : records) by_n[r.n].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto &[n, rows] : by_n) {
    SummaryRow s;
    s.n = n;
    s.replications = rows.size();
    std::vector<double> frob, param, cover, ks_rm, ks_avg;
    for (const auto *r : rows) {
      if (r->frob_err_sq) frob.push_back(*r->frob_err_sq);
      if (r->param_err_sq) param.push_back(*r->param_err_sq);
      if (r->coverage_hit) cover.push_back(*r->coverage_hit ? 1.0 : 0.0);
      if (r->ks_rm) ks_rm.push_back(r->ks_rm->p_value >= 0.05 ? 1.0 : 0.0);
      if (r->ks_avg) ks_avg.push_back(r->ks_avg->p_value >= 0.05 ? 1.0 : 0.0);
    }
    if (!frob.empty()) {
      s.mean_frob_err_sq = detail::mean_of_sorted(frob);
      s.median_frob_err_sq = detail::median_of(frob);
    }
    if (!param.empty()) s.mean_param_err_sq = detail::mean_of_sorted(param);
    if (!cover.empty()) s.coverage_rate = detail::mean_of_sorted(cover);
    if (!ks_rm.empty()) s.ks_rm_pass_rate = detail::mean_of_sorted(ks_rm);
    if (!ks_avg.empty()) s.ks_avg_pass_rate = detail::mean_of_sorted(ks_avg);
    out.push_back(s);
  }
  return out;
}

/// Runs every replication (on a worker pool) and collects records in
/// (replication, n) order. `observer`, if set, is called at each checkpoint
/// from worker threads.
inline RunResult run(const RunConfig &cfg, const detail::Observer &observer = {}) {
  validate(cfg);
  RunResult result;
  result.checkpoints = checkpoint_schedule(cfg.checkpoints, cfg.n_total, cfg.splits);

  std::vector<detail::ReplicationOutput> outputs(cfg.replications);
  if (cfg.problem == Problem::logistic_csv) {
    outputs[0] = detail::run_csv(cfg, result.checkpoints, observer);
  } else {
    unsigned workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, cfg.replications);
    std::atomic<std::uint32_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
      while (true) {
        const std::uint32_t r = next.fetch_add(1);
        if (r >= cfg.replications) return;
        try {
          outputs[r] = detail::run_synthetic(cfg, r, result.checkpoints, observer);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(cfg.replications);
          return;
        }
      }
    };
    if (workers <= 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (unsigned i = 0; i < workers; ++i) pool.emplace_back(work);
      for (auto &t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
  }
  for (auto &o : outputs) {
    result.records.insert(result.records.end(), o.records.begin(), o.records.end());
    result.residuals.insert(result.residuals.end(), o.residuals.begin(), o.residuals.end());
  }
  result.summary = summarize(result.records);
  return result;
}

// ---------------------------------------------------------------------------
// Output

/// 17 significant digits: enough for an exact double round trip.
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics_jsonl(std::ostream &os, const std::vector<MetricsRecord> &records) {
  auto ks = [](const analysis::KsResult &k) {
    return "{\"statistic\":" + fmt17(k.statistic) + ",\"p_value\":" + fmt17(k.p_value) +
           ",\"sample_size\":" + std::to_string(k.sample_size) + "}";
  };
  for (const auto &r : records) {
    os << "{\"n\":" << r.n << ",\"replication\":" << r.replication;
    if (r.frob_err_sq) os << ",\"frob_err_sq\":" << fmt17(*r.frob_err_sq);
    if (r.param_err_sq) os << ",\"param_err_sq\":" << fmt17(*r.param_err_sq);
    if (r.ks_rm) os << ",\"ks_rm\":" << ks(*r.ks_rm);
    if (r.ks_avg) os << ",\"ks_avg\":" << ks(*r.ks_avg);
    if (r.coverage_hit) os << ",\"coverage_hit\":" << (*r.coverage_hit ? "true" : "false");
    os << ",\"skipped\":" << r.skipped;
    if (r.wall_time_ms) os << ",\"wall_time_ms\":" << fmt17(*r.wall_time_ms);
    os << "}\n";
  }
}

inline void write_metrics_csv(std::ostream &os, const std::vector<MetricsRecord> &records) {
  const bool timing = std::any_of(records.begin(), records.end(),
                                  [](const auto &r) { return r.wall_time_ms.has_value(); });
  os << "n,replication,frob_err_sq,param_err_sq,ks_rm_statistic,ks_rm_p_value,"
        "ks_avg_statistic,ks_avg_p_value,coverage_hit,skipped";
  if (timing) os << ",wall_time_ms";
  os << "\n";
  auto opt = [](const std::optional<double> &v) { return v ? fmt17(*v) : std::string(); };
  for (const auto &r : records) {
    os << r.n << ',' << r.replication << ',' << opt(r.frob_err_sq) << ',' << opt(r.param_err_sq)
       << ',' << (r.ks_rm ? fmt17(r.ks_rm->statistic) : "") << ','
       << (r.ks_rm ? fmt17(r.ks_rm->p_value) : "") << ','
       << (r.ks_avg ? fmt17(r.ks_avg->statistic) : "") << ','
       << (r.ks_avg ? fmt17(r.ks_avg->p_value) : "") << ','
       << (r.coverage_hit ? (*r.coverage_hit ? "1" : "0") : "") << ',' << r.skipped;
    if (timing) os << ',' << opt(r.wall_time_ms);
    os << "\n";
  }
}

inline void write_residuals_csv(std::ostream &os, const std::vector<ResidualRow> &rows) {
  os << "n,replication,component,q_rm,q_avg\n";
  for (const auto &r : rows) {
    os << r.n << ',' << r.replication << ',' << r.component << ','
       << (r.q_rm ? fmt17(*r.q_rm) : "") << ',' << fmt17(r.q_avg) << "\n";
  }
}

inline void write_summary_csv(std::ostream &os, const std::vector<SummaryRow> &rows) {
  os << "n,replications,mean_frob_err_sq,median_frob_err_sq,mean_param_err_sq,coverage_rate,"
        "ks_rm_pass_rate,ks_avg_pass_rate\n";
  auto opt = [](const std::optional<double> &v) { return v ? fmt17(*v) : std::string(); };
  for (const auto &s : rows) {
    os << s.n << ',' << s.replications << ',' << opt(s.mean_frob_err_sq) << ','
       << opt(s.median_frob_err_sq) << ',' << opt(s.mean_param_err_sq) << ','
       << opt(s.coverage_rate) << ',' << opt(s.ks_rm_pass_rate) << ','
       << opt(s.ks_avg_pass_rate) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Config <-> JSON

inline nlohmann::json point_to_json(const Point &p) {
  return std::vector<double>(p.data(), p.data() + p.size());
}

inline Point point_from_json(const nlohmann::json &j, const char *key) {
  if (!j.is_array()) throw ConfigError(std::string(key) + " must be an array of numbers");
  Point p(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(key) + " must be an array of numbers");
    p(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return p;
}

inline nlohmann::json to_json(const RunConfig &c) {
  nlohmann::json j;
  j["problem"] = to_string(c.problem);
  j["d"] = c.d;
  j["n_total"] = c.n_total;
  j["params"] = {{"c_gamma", c.params.c_gamma},
                 {"alpha", c.params.alpha},
                 {"s", c.params.s},
                 {"delta", c.params.delta},
                 {"mu", c.params.mu}};
  j["seed"] = c.seed;
  j["replications"] = c.replications;
  j["splits"] = c.splits;
  j["checkpoints"] = {{"points_per_decade", c.checkpoints.points_per_decade},
                      {"points", c.checkpoints.points}};
  if (c.direction) j["direction"] = point_to_json(*c.direction);
  if (c.theta_star) j["theta_star"] = point_to_json(*c.theta_star);
  if (c.init) j["init"] = point_to_json(*c.init);
  j["feature_law"] = to_string(c.feature_law);
  if (c.input_path) j["input_path"] = *c.input_path;
  nlohmann::json csv;
  csv["label_column"] = c.csv.label_column ? nlohmann::json(*c.csv.label_column) : nlohmann::json();
  csv["feature_columns"] = c.csv.feature_columns;
  csv["has_header"] = c.csv.has_header;
  csv["remap_zero_one"] = c.csv.remap_zero_one;
  j["csv"] = csv;
  j["output_path"] = c.output_path;
  j["format"] = to_string(c.format);
  j["residuals"] = c.residuals;
  j["level"] = c.level;
  j["threads"] = c.threads;
  j["timings"] = c.timings;
  return j;
}

/// Reads a config document; keys absent from `j` keep the values in `base`.
inline RunConfig config_from_json(const nlohmann::json &j, RunConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = std::move(base);
  try {
    for (const auto &[key, v] : j.items()) {
      if (key == "problem") {
        c.problem = problem_from_string(v.get<std::string>());
      } else if (key == "d") {
        c.d = v.get<Eigen::Index>();
      } else if (key == "n_total") {
        c.n_total = v.get<std::uint64_t>();
      } else if (key == "params") {
        for (const auto &[pk, pv] : v.items()) {
          const double x = pv.get<double>();
          if (pk == "c_gamma") c.params.c_gamma = x;
          else if (pk == "alpha") c.params.alpha = x;
          else if (pk == "s") c.params.s = x;
          else if (pk == "delta") c.params.delta = x;
          else if (pk == "mu") c.params.mu = x;
          else throw ConfigError("unknown params key '" + pk + "'");
        }
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else if (key == "replications") {
        c.replications = v.get<std::uint32_t>();
      } else if (key == "splits") {
        c.splits = v.get<std::uint32_t>();
      } else if (key == "checkpoints") {
        for (const auto &[ck, cv] : v.items()) {
          if (ck == "points_per_decade") c.checkpoints.points_per_decade = cv.get<int>();
          else if (ck == "points") c.checkpoints.points = cv.get<std::vector<std::uint64_t>>();
          else throw ConfigError("unknown checkpoints key '" + ck + "'");
        }
      } else if (key == "direction") {
        c.direction = point_from_json(v, "direction");
      } else if (key == "theta_star") {
        c.theta_star = point_from_json(v, "theta_star");
      } else if (key == "init") {
        c.init = point_from_json(v, "init");
      } else if (key == "feature_law") {
        c.feature_law = feature_law_from_string(v.get<std::string>());
      } else if (key == "input_path") {
        c.input_path = v.get<std::string>();
      } else if (key == "csv") {
        for (const auto &[ck, cv] : v.items()) {
          if (ck == "label_column") {
            c.csv.label_column = cv.is_null() ? std::nullopt
                                              : std::optional<std::size_t>(cv.get<std::size_t>());
          } else if (ck == "feature_columns") {
            c.csv.feature_columns = cv.get<std::vector<std::size_t>>();
          } else if (ck == "has_header") {
            c.csv.has_header = cv.get<bool>();
          } else if (ck == "remap_zero_one") {
            c.csv.remap_zero_one = cv.get<bool>();
          } else {
            throw ConfigError("unknown csv key '" + ck + "'");
          }
        }
      } else if (key == "output_path") {
        c.output_path = v.get<std::string>();
      } else if (key == "format") {
        c.format = format_from_string(v.get<std::string>());
      } else if (key == "residuals") {
        c.residuals = v.get<bool>();
      } else if (key == "level") {
        c.level = v.get<double>();
      } else if (key == "threads") {
        c.threads = v.get<unsigned>();
      } else if (key == "timings") {
        c.timings = v.get<bool>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string &path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, std::move(base));
}

/// Writes metrics, summary, residuals (if any) and meta.json under
/// cfg.output_path. Everything except wall_time_ms is a pure function of the
/// config.
inline void write_outputs(const RunConfig &cfg, const RunResult &result) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.output_path, ec);
  if (ec) throw IoError("cannot create " + cfg.output_path + ": " + ec.message());
  const fs::path dir(cfg.output_path);

  auto open = [](const fs::path &p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
  };
  auto close = [](std::ofstream &f, const fs::path &p) {
    f.flush();
    if (!f) throw IoError("write failed for " + p.string());
  };

  const fs::path metrics =
      dir / (cfg.format == OutputFormat::jsonl ? "metrics.jsonl" : "metrics.csv");
  {
    auto f = open(metrics);
    if (cfg.format == OutputFormat::jsonl) {
      write_metrics_jsonl(f, result.records);
    } else {
      write_metrics_csv(f, result.records);
    }
    close(f, metrics);
  }
  {
    const fs::path p = dir / "summary.csv";
    auto f = open(p);
    write_summary_csv(f, result.summary);
    close(f, p);
  }
  if (cfg.residuals) {
    const fs::path p = dir / "residuals.csv";
    auto f = open(p);
    write_residuals_csv(f, result.residuals);
    close(f, p);
  }
  {
    const fs::path p = dir / "meta.json";
    auto f = open(p);
    nlohmann::json meta;
    meta["config"] = to_json(cfg);
    meta["seed"] = cfg.seed;
    meta["generator"] = kGeneratorName;
    meta["code_version"] = kCodeVersion;
    meta["checkpoints"] = result.checkpoints;
    f << meta.dump(2) << "\n";
    close(f, p);
  }
}

}  // namespace avsgd::experiment
