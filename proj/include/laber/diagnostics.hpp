#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laber/rng.hpp"
#include "laber/sampling.hpp"

namespace laber {

// One row of the per-step diagnostic stream. Optional fields are written as
// empty CSV cells / JSON nulls.
struct DiagRecord {
  std::uint64_t step = 0;
  std::optional<double> loss;
  std::string sampler;
  std::optional<double> variance_term;
  std::optional<double> tv_surrogate;  // TV(p_hat, p*) over the large batch
  std::optional<double> tv_uniform;    // TV(u, p*) over the large batch
  std::optional<double> episode_return;

  bool operator==(const DiagRecord&) const = default;
};

// E_p[G^T G]; see expected_squared_norm.
double variance_term(const Distribution& p, std::span<const double> grad_norms);

// Least-squares instance with per-sample loss 0.5 (a_i^T theta - b_i)^2 and its
// exact minimizer.
struct LeastSquaresProblem {
  Eigen::MatrixXd features;  // N x d
  Eigen::VectorXd targets;   // N
  Eigen::VectorXd optimum;

  static LeastSquaresProblem random(std::size_t n, std::size_t dim, Rng& rng, double noise = 0.5);
  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  Eigen::VectorXd gradient(std::size_t i, const Eigen::VectorXd& theta) const;
  std::vector<double> gradient_norms(const Eigen::VectorXd& theta) const;
};

struct ConvergenceSpeed {
  double monte_carlo = 0.0;  // -mean(||theta_{t+1} - theta*||^2 - ||theta_t - theta*||^2)
  double analytic = 0.0;     // 2 eta (theta_t - theta*)^T E[G] - eta^2 E[G^T G]
};

// One importance-weighted SGD step from theta_t with i ~ p, repeated n_trials times.
ConvergenceSpeed convergence_speed(const LeastSquaresProblem& problem, const Distribution& p, double eta,
                                   const Eigen::VectorXd& theta_t, std::size_t n_trials, Rng& rng);

struct Histogram {
  std::vector<double> edges;  // bins [edges[k], edges[k+1]); the last bin is closed
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

Histogram make_histogram(std::span<const double> values, std::span<const double> edges);

struct TVStudyConfig {
  std::size_t recording_period = 1;  // keep every k-th TV record
  std::vector<double> bin_edges;     // must span [0, 2]
  double window_fraction = 0.1;      // first / last share of recorded steps

  static TVStudyConfig defaults(std::size_t bins = 20);
  void validate() const;
};

// One-sided Mann-Whitney rank-sum test of H1: values in `a` tend to be smaller
// than values in `b` (normal approximation with tie correction).
struct RankSumResult {
  double u_statistic = 0.0;
  double z_score = 0.0;
  double p_value = 1.0;
};

RankSumResult rank_sum_less(std::span<const double> a, std::span<const double> b);

struct TvWindow {
  std::size_t count = 0;
  Histogram surrogate;
  Histogram uniform;
  double mean_surrogate = 0.0;
  double mean_uniform = 0.0;
  RankSumResult test;
};

struct TvStudyResult {
  TvWindow all;
  TvWindow first;
  TvWindow last;
};

// Bins the TV pairs carried by `records` over all steps and the first / last windows.
TvStudyResult tv_study(std::span<const DiagRecord> records, const TVStudyConfig& config);

enum class ExportFormat { csv, json };

void export_records(std::span<const DiagRecord> records, const std::filesystem::path& path, ExportFormat format);
std::vector<DiagRecord> read_records(const std::filesystem::path& path, ExportFormat format);

// Shortest decimal representation that round-trips exactly.
std::string format_double(double value);

}  // namespace laber
