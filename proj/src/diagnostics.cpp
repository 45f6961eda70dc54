#include "laber/diagnostics.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "laber/error.hpp"

namespace laber {

namespace {

constexpr const char* kCsvHeader = "step,loss,sampler,variance_term,tv_surrogate,tv_uniform,episode_return";

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_optional(const std::string& cell, std::size_t line) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw Error(ErrorKind::IoError, "line " + std::to_string(line) + ": bad number '" + cell + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

void set_optional(nlohmann::json& obj, const char* key, const std::optional<double>& v) {
  obj[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> get_optional(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return obj.at(key).get<double>();
}

TvWindow summarize(std::span<const double> surrogate, std::span<const double> uniform, std::span<const double> edges) {
  TvWindow w;
  w.count = surrogate.size();
  w.surrogate = make_histogram(surrogate, edges);
  w.uniform = make_histogram(uniform, edges);
  if (w.count > 0) {
    w.mean_surrogate = std::accumulate(surrogate.begin(), surrogate.end(), 0.0) / static_cast<double>(w.count);
    w.mean_uniform = std::accumulate(uniform.begin(), uniform.end(), 0.0) / static_cast<double>(w.count);
    w.test = rank_sum_less(surrogate, uniform);
  }
  return w;
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double variance_term(const Distribution& p, std::span<const double> grad_norms) {
  return expected_squared_norm(p, grad_norms);
}

LeastSquaresProblem LeastSquaresProblem::random(std::size_t n, std::size_t dim, Rng& rng, double noise) {
  if (n == 0 || dim == 0) throw Error(ErrorKind::InvalidArgument, "problem needs n, dim >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  LeastSquaresProblem problem;
  problem.features.resize(n, dim);
  for (Eigen::Index i = 0; i < problem.features.rows(); ++i) {
    // Rows with very different scales make per-sample gradient norms heterogeneous.
    const double scale = std::exp(normal(rng));
    for (Eigen::Index j = 0; j < problem.features.cols(); ++j) problem.features(i, j) = scale * normal(rng);
  }
  Eigen::VectorXd truth(dim);
  for (Eigen::Index j = 0; j < truth.size(); ++j) truth(j) = normal(rng);
  problem.targets = problem.features * truth;
  for (Eigen::Index i = 0; i < problem.targets.size(); ++i) problem.targets(i) += noise * normal(rng);
  problem.optimum = problem.features.colPivHouseholderQr().solve(problem.targets);
  return problem;
}

Eigen::VectorXd LeastSquaresProblem::gradient(std::size_t i, const Eigen::VectorXd& theta) const {
  const auto row = features.row(static_cast<Eigen::Index>(i));
  return row.transpose() * (row.dot(theta) - targets(static_cast<Eigen::Index>(i)));
}

std::vector<double> LeastSquaresProblem::gradient_norms(const Eigen::VectorXd& theta) const {
  std::vector<double> norms(size());
  for (std::size_t i = 0; i < size(); ++i) norms[i] = gradient(i, theta).norm();
  return norms;
}

ConvergenceSpeed convergence_speed(const LeastSquaresProblem& problem, const Distribution& p, double eta,
                                   const Eigen::VectorXd& theta_t, std::size_t n_trials, Rng& rng) {
  if (p.size() != problem.size()) throw Error(ErrorKind::LengthMismatch, "distribution does not match problem");
  if (n_trials == 0) throw Error(ErrorKind::InvalidArgument, "need at least one trial");
  const double n = static_cast<double>(problem.size());

  std::vector<Eigen::VectorXd> weighted(problem.size());
  Eigen::VectorXd mean_g = Eigen::VectorXd::Zero(theta_t.size());
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const Eigen::VectorXd g = problem.gradient(i, theta_t);
    mean_g += g / n;
    if (p[i] > 0.0) weighted[i] = g / (n * p[i]);
  }

  const Eigen::VectorXd offset = theta_t - problem.optimum;
  const double start = offset.squaredNorm();
  double acc = 0.0;
  for (std::size_t i : sample_indices(p, n_trials, rng)) {
    acc += (offset - eta * weighted[i]).squaredNorm() - start;
  }

  ConvergenceSpeed out;
  out.monte_carlo = -acc / static_cast<double>(n_trials);
  out.analytic = 2.0 * eta * offset.dot(mean_g) -
                 eta * eta * expected_squared_norm(p, problem.gradient_norms(theta_t));
  return out;
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram make_histogram(std::span<const double> values, std::span<const double> edges) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw Error(ErrorKind::InvalidArgument, "histogram needs at least two increasing edges");
  }
  Histogram h{std::vector<double>(edges.begin(), edges.end()), std::vector<std::size_t>(edges.size() - 1, 0)};
  for (double v : values) {
    if (!(v >= edges.front() && v <= edges.back())) {
      throw Error(ErrorKind::OutOfRange, "value " + format_double(v) + " outside histogram range");
    }
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin());
    bin = bin == 0 ? 0 : std::min(bin - 1, h.counts.size() - 1);
    ++h.counts[bin];
  }
  return h;
}

TVStudyConfig TVStudyConfig::defaults(std::size_t bins) {
  TVStudyConfig cfg;
  for (std::size_t k = 0; k <= bins; ++k) cfg.bin_edges.push_back(2.0 * static_cast<double>(k) / static_cast<double>(bins));
  return cfg;
}

void TVStudyConfig::validate() const {
  if (recording_period == 0) throw Error(ErrorKind::InvalidArgument, "recording period must be >= 1");
  if (bin_edges.size() < 2 || bin_edges.front() > 0.0 || bin_edges.back() < 2.0 ||
      !std::is_sorted(bin_edges.begin(), bin_edges.end())) {
    throw Error(ErrorKind::InvalidArgument, "TV bins must be increasing and cover [0, 2]");
  }
  if (!(window_fraction > 0.0 && window_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "window fraction must lie in (0, 1]");
  }
}

RankSumResult rank_sum_less(std::span<const double> a, std::span<const double> b) {
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  if (n1 == 0 || n2 == 0) throw Error(ErrorKind::InvalidArgument, "rank-sum test needs two non-empty samples");

  std::vector<std::pair<double, bool>> pooled;  // (value, from a)
  pooled.reserve(n1 + n2);
  for (double v : a) pooled.emplace_back(v, true);
  for (double v : b) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  const double n = static_cast<double>(n1 + n2);
  double rank_sum_a = 0.0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second) rank_sum_a += avg_rank;
    }
    i = j;
  }

  const double m1 = static_cast<double>(n1);
  const double m2 = static_cast<double>(n2);
  RankSumResult r;
  r.u_statistic = rank_sum_a - m1 * (m1 + 1.0) / 2.0;
  const double mean = m1 * m2 / 2.0;
  const double var = m1 * m2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return r;
  r.z_score = (r.u_statistic - mean + 0.5) / std::sqrt(var);
  r.p_value = 0.5 * std::erfc(-r.z_score / std::sqrt(2.0));
  return r;
}

TvStudyResult tv_study(std::span<const DiagRecord> records, const TVStudyConfig& config) {
  config.validate();
  std::vector<double> surrogate;
  std::vector<double> uniform;
  std::size_t seen = 0;
  for (const DiagRecord& r : records) {
    if (!r.tv_surrogate || !r.tv_uniform) continue;
    if (seen++ % config.recording_period != 0) continue;
    surrogate.push_back(*r.tv_surrogate);
    uniform.push_back(*r.tv_uniform);
  }
  const std::size_t n = surrogate.size();
  const auto window = std::min(
      n, static_cast<std::size_t>(std::ceil(config.window_fraction * static_cast<double>(n))));
  const std::span<const double> s(surrogate);
  const std::span<const double> u(uniform);

  TvStudyResult out;
  out.all = summarize(s, u, config.bin_edges);
  out.first = summarize(s.first(window), u.first(window), config.bin_edges);
  out.last = summarize(s.last(window), u.last(window), config.bin_edges);
  return out;
}

void export_records(std::span<const DiagRecord> records, const std::filesystem::path& path, ExportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  if (format == ExportFormat::csv) {
    out << kCsvHeader << '\n';
    for (const DiagRecord& r : records) {
      out << r.step << ',' << optional_cell(r.loss) << ',' << r.sampler << ',' << optional_cell(r.variance_term) << ','
          << optional_cell(r.tv_surrogate) << ',' << optional_cell(r.tv_uniform) << ','
          << optional_cell(r.episode_return) << '\n';
    }
  } else {
    nlohmann::json arr = nlohmann::json::array();
    for (const DiagRecord& r : records) {
      nlohmann::json obj;
      obj["step"] = r.step;
      set_optional(obj, "loss", r.loss);
      obj["sampler"] = r.sampler;
      set_optional(obj, "variance_term", r.variance_term);
      set_optional(obj, "tv_surrogate", r.tv_surrogate);
      set_optional(obj, "tv_uniform", r.tv_uniform);
      set_optional(obj, "episode_return", r.episode_return);
      arr.push_back(std::move(obj));
    }
    out << arr.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

std::vector<DiagRecord> read_records(const std::filesystem::path& path, ExportFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<DiagRecord> records;
  if (format == ExportFormat::csv) {
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw Error(ErrorKind::IoError, "missing or unknown CSV header");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::vector<std::string> cells = split_csv_line(line);
      if (cells.size() != 7) throw Error(ErrorKind::IoError, "line " + std::to_string(line_no) + ": expected 7 fields");
      DiagRecord r;
      const auto step = parse_optional(cells[0], line_no);
      if (!step) throw Error(ErrorKind::IoError, "line " + std::to_string(line_no) + ": missing step");
      r.step = std::stoull(cells[0]);
      r.loss = parse_optional(cells[1], line_no);
      r.sampler = cells[2];
      r.variance_term = parse_optional(cells[3], line_no);
      r.tv_surrogate = parse_optional(cells[4], line_no);
      r.tv_uniform = parse_optional(cells[5], line_no);
      r.episode_return = parse_optional(cells[6], line_no);
      records.push_back(std::move(r));
    }
  } else {
    try {
      nlohmann::json arr;
      in >> arr;
      for (const auto& obj : arr) {
        DiagRecord r;
        r.step = obj.at("step").get<std::uint64_t>();
        r.loss = get_optional(obj, "loss");
        r.sampler = obj.at("sampler").get<std::string>();
        r.variance_term = get_optional(obj, "variance_term");
        r.tv_surrogate = get_optional(obj, "tv_surrogate");
        r.tv_uniform = get_optional(obj, "tv_uniform");
        r.episode_return = get_optional(obj, "episode_return");
        records.push_back(std::move(r));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::IoError, std::string("bad JSON: ") + e.what());
    }
  }
  return records;
}

}  // namespace laber
