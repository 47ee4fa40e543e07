// Command-line front end: runs an averaged-SGD experiment with online
// covariance estimation and writes metrics under --output.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "avsgd/experiment.hpp"

namespace {

avsgd::Point to_point(const std::vector<double> &v) {
  return Eigen::Map<const avsgd::Point>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

int main(int argc, char **argv) {
  using namespace avsgd::experiment;

  CLI::App app{"Averaged SGD with recursive estimation of the asymptotic covariance"};
  app.set_version_flag("--version", kCodeVersion);

  std::string config_path;
  std::string problem, format, feature_law;
  Eigen::Index dim = 0;
  std::uint64_t n_total = 0, seed = 0;
  double alpha = 0, c_gamma = 0, s = 0, delta = 0, mu = 0, level = 0;
  std::uint32_t replications = 0, splits = 0;
  int per_decade = 0;
  std::vector<std::uint64_t> checkpoints;
  std::vector<double> direction, theta_star, init;
  std::string input, output;
  std::size_t label_column = 0;
  unsigned threads = 0;

  app.add_option("--config", config_path, "JSON config mirroring RunConfig; flags override it");
  auto *o_problem = app.add_option("--problem", problem,
                                   "sphere_median | geometric_quantile | logistic_synthetic | logistic_csv");
  auto *o_dim = app.add_option("--dim", dim, "dimension d");
  auto *o_n = app.add_option("--n-total", n_total, "iterates per replication (all splits)");
  auto *o_alpha = app.add_option("--alpha", alpha, "step exponent alpha");
  auto *o_cg = app.add_option("--c-gamma", c_gamma, "step scale c_gamma");
  auto *o_s = app.add_option("--s", s, "variance weight exponent s");
  auto *o_delta = app.add_option("--delta", delta, "kernel exponent delta");
  auto *o_mu = app.add_option("--mu", mu, "polynomial weight exponent mu");
  auto *o_seed = app.add_option("--seed", seed, "base seed");
  auto *o_reps = app.add_option("--replications", replications, "independent replications");
  auto *o_splits = app.add_option("--splits", splits, "parallel split-and-average parts p");
  auto *o_ppd = app.add_option("--checkpoints-per-decade", per_decade, "geometric checkpoint density");
  auto *o_cps = app.add_option("--checkpoints", checkpoints, "explicit checkpoints")->delimiter(',');
  auto *o_dir = app.add_option("--direction", direction, "quantile direction v")->delimiter(',');
  auto *o_theta = app.add_option("--theta-star", theta_star, "true logistic parameter")->delimiter(',');
  auto *o_init = app.add_option("--init", init, "starting point m_1 (default 0)")->delimiter(',');
  auto *o_law = app.add_option("--feature-law", feature_law, "standard_normal | uniform_cube");
  auto *o_input = app.add_option("--input", input, "CSV input (logistic_csv)");
  auto *o_label = app.add_option("--label-column", label_column, "0-based label column");
  auto *o_header = app.add_flag("--header", "CSV has a header row");
  auto *o_remap = app.add_flag("--remap-labels", "map {0,1} labels to {-1,+1}");
  auto *o_out = app.add_option("--output", output, "output directory");
  auto *o_fmt = app.add_option("--format", format, "jsonl | csv");
  auto *o_res = app.add_flag("--residuals", "write residuals.csv with Q_n and Q_n'");
  auto *o_level = app.add_option("--level", level, "confidence level");
  auto *o_threads = app.add_option("--threads", threads, "worker threads (0 = all cores)");
  auto *o_timings = app.add_flag("--timings", "record wall_time_ms (breaks byte-reproducibility)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return static_cast<int>(avsgd::ErrorCategory::config);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (*o_problem) cfg.problem = problem_from_string(problem);
    if (*o_dim) cfg.d = dim;
    if (*o_n) cfg.n_total = n_total;
    if (*o_alpha) cfg.params.alpha = alpha;
    if (*o_cg) cfg.params.c_gamma = c_gamma;
    if (*o_s) cfg.params.s = s;
    if (*o_delta) cfg.params.delta = delta;
    if (*o_mu) cfg.params.mu = mu;
    if (*o_seed) cfg.seed = seed;
    if (*o_reps) cfg.replications = replications;
    if (*o_splits) cfg.splits = splits;
    if (*o_ppd) cfg.checkpoints.points_per_decade = per_decade;
    if (*o_cps) cfg.checkpoints.points = checkpoints;
    if (*o_dir) cfg.direction = to_point(direction);
    if (*o_theta) cfg.theta_star = to_point(theta_star);
    if (*o_init) cfg.init = to_point(init);
    if (*o_law) cfg.feature_law = feature_law_from_string(feature_law);
    if (*o_input) cfg.input_path = input;
    if (*o_label) cfg.csv.label_column = label_column;
    if (*o_header) cfg.csv.has_header = true;
    if (*o_remap) cfg.csv.remap_zero_one = true;
    if (*o_out) cfg.output_path = output;
    if (*o_fmt) cfg.format = format_from_string(format);
    if (*o_res) cfg.residuals = true;
    if (*o_level) cfg.level = level;
    if (*o_threads) cfg.threads = threads;
    if (*o_timings) cfg.timings = true;
    if (cfg.problem == Problem::logistic_csv && !*o_dim && config_path.empty()) cfg.d = 0;

    const RunResult result = run(cfg);
    write_outputs(cfg, result);

    std::cout << "n,replications,mean_frob_err_sq,median_frob_err_sq,mean_param_err_sq,coverage_rate\n";
    for (const auto &row : result.summary) {
      auto opt = [](const std::optional<double> &v) { return v ? fmt17(*v) : std::string("-"); };
      std::cout << row.n << ',' << row.replications << ',' << opt(row.mean_frob_err_sq) << ','
                << opt(row.median_frob_err_sq) << ',' << opt(row.mean_param_err_sq) << ','
                << opt(row.coverage_rate) << "\n";
    }
    return 0;
  } catch (const avsgd::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(avsgd::ErrorCategory::numeric);
  }
}
