// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "helpers.hpp"
#include "laber/sum_tree.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace laber;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

int invoke(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "laber");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream o;
  std::ostringstream e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  return code;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("laber_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

Verdict variance_study() {
  std::ostringstream table;
  const auto v = cli::variance_study_values();
  const int code = cli::report_variance_study(v, table);
  return {code == 0, fmt("uniform=%.17g optimal=%.17g td_error=%.17g", v[0], v[1], v[2])};
}

Verdict optimality_lemma() {
  Rng rng(101);
  std::uniform_int_distribution<std::size_t> size(1, 32);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> g = testing::random_positive(n, rng, 0.0, 10.0);
    for (std::size_t i = 0; i < n; i += 4) g[i] = 0.0;
    if (std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; })) g[0] = 1.0;
    const Distribution q(testing::random_histogram(n, rng));
    if (expected_squared_norm(optimal_distribution(g), g) > expected_squared_norm(q, g)) ++violations;
  }
  return {violations == 0, fmt("1000 instances, %.0f violations", static_cast<double>(violations))};
}

Verdict unbiasedness() {
  bool pass = true;
  std::string detail = "rel. errors:";
  for (const char* scheme : {"uniform", "per", "ger", "laber-mean"}) {
    const double err = testing::unbiasedness_error(scheme, 64, 100'000, 303);
    pass = pass && err < 1e-2;
    detail += std::string(" ") + scheme + fmt("=%.2e", err);
  }
  return {pass, detail};
}

Verdict finite_differences() {
  Rng rng(404);
  double worst = 0.0;
  std::size_t cases = 0;
  for (LossKind kind : {LossKind::l2, LossKind::huber, LossKind::categorical_ce}) {
    std::size_t done = 0;
    while (done < 100) {
      testing::Case c = testing::make_case(kind, rng, 1);
      const ForwardCache cache = forward(c.net, c.inputs);
      // Central differences are inexact across the Huber kink.
      if (kind == LossKind::huber && std::abs(std::abs(td_errors(cache, c.targets)[0]) - 1.0) < 1e-3) continue;
      const Eigen::VectorXd analytic = per_sample_gradients(c.net, cache, c.targets, c.loss).row(0).transpose();
      const Eigen::VectorXd fd = finite_difference_loss_gradient(c.net, c.inputs.row(0).transpose(), c.targets[0], c.loss);
      worst = std::max(worst, (analytic - fd).norm() / std::max(fd.norm(), 1e-12));
      ++done;
    }
    cases += done;
  }
  return {worst < 1e-5, fmt("%.0f cases, worst rel. error %.2e", static_cast<double>(cases), worst)};
}

Verdict surrogate_specializations() {
  Rng rng(505);
  std::size_t mismatches = 0;
  double worst_ce = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    for (LossKind kind : {LossKind::l2, LossKind::huber}) {
      testing::Case c = testing::make_case(kind, rng, 5);
      const ForwardCache cache = forward(c.net, c.inputs);
      const std::vector<double> s = surrogate_norm(c.net, cache, c.targets, c.loss);
      const std::vector<double> d = td_errors(cache, c.targets);
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double expected = kind == LossKind::l2 ? std::abs(d[i]) : std::min(std::abs(d[i]), 1.0);
        if (s[i] != expected) ++mismatches;
      }
    }
    testing::Case c = testing::make_case(LossKind::categorical_ce, rng, 5);
    const ForwardCache cache = forward(c.net, c.inputs);
    const std::vector<double> s = surrogate_norm(c.net, cache, c.targets, c.loss);
    const auto atoms = static_cast<Eigen::Index>(c.loss.atoms);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Eigen::VectorXd z = cache.last_preactivation().row(static_cast<Eigen::Index>(i)).transpose();
      const Eigen::VectorXd q = testing::softmax(z.segment(static_cast<Eigen::Index>(c.targets[i].action) * atoms, atoms));
      const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(c.targets[i].distribution.data(), atoms);
      worst_ce = std::max(worst_ce, std::abs(s[i] - (q - y).norm()));
    }
  }
  return {mismatches == 0 && worst_ce <= 1e-10,
          fmt("identity mismatches %.0f, softmax+CE max deviation %.2e", static_cast<double>(mismatches), worst_ce)};
}

Verdict surrogate_bound() {
  Rng rng(606);
  std::size_t violations = 0;
  std::size_t checked = 0;
  const LossKind kinds[] = {LossKind::l2, LossKind::huber, LossKind::categorical_ce};
  for (int net = 0; net < 100; ++net) {
    testing::Case c = testing::make_case(kinds[net % 3], rng, 4);
    const ForwardCache cache = forward(c.net, c.inputs);
    const std::vector<double> norms = per_sample_gradient_norms(c.net, cache, c.targets, c.loss);
    const std::vector<double> s = surrogate_norm(c.net, cache, c.targets, c.loss);
    for (std::size_t i = 0; i < norms.size(); ++i) {
      const Eigen::MatrixXd jac = last_preactivation_jacobian(c.net, cache, i);
      const double op = Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues()(0);
      // Only rounding slack: the inequality itself is exact.
      if (norms[i] > s[i] * op * (1.0 + 1e-12) + 1e-15) ++violations;
      ++checked;
    }
  }
  return {violations == 0, fmt("100 nets, %.0f samples, %.0f violations", static_cast<double>(checked),
                               static_cast<double>(violations))};
}

Verdict sum_tree() {
  Rng rng(707);
  std::uniform_int_distribution<std::size_t> size(1, 64);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 10'000; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> leaves = testing::random_positive(n, rng, 0.0, 3.0);
    for (std::size_t i = 0; i < n; i += 3) leaves[i] = 0.0;
    if (std::accumulate(leaves.begin(), leaves.end(), 0.0) == 0.0) leaves[n - 1] = 1.0;
    SumTree tree(n);
    for (std::size_t i = 0; i < n; ++i) tree.set(i, leaves[i]);
    const double u = uniform01(rng) * tree.total();
    // Naive prefix search over the leaves.
    std::size_t naive = n - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += leaves[i];
      if (u < acc && leaves[i] > 0.0) {
        naive = i;
        break;
      }
    }
    if (tree.sample(u) != naive) ++mismatches;
  }

  const std::size_t k = 16;
  const std::vector<double> priorities = testing::random_positive(k, rng, 0.1, 5.0);
  SumTree tree(k);
  for (std::size_t i = 0; i < k; ++i) tree.set(i, priorities[i]);
  const double total = tree.total();
  const std::size_t draws = 1'000'000;
  std::vector<double> counts(k, 0.0);
  for (std::size_t d = 0; d < draws; ++d) counts[tree.sample(uniform01(rng) * total)] += 1.0;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double expected = draws * priorities[i] / total;
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  const double bound = testing::chi_square_bound(k - 1);
  return {mismatches == 0 && chi2 < bound,
          fmt("%.0f mismatches in 1e4 searches; chi2=%.2f (bound %.2f, 15 dof, 1e6 draws)",
              static_cast<double>(mismatches), chi2, bound)};
}

Verdict mean_limit() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    testing::FrozenBuffer fb = testing::frozen_buffer(32, 8, 4, seed);
    Rng rng(seed + 808);
    const SampleBatch large = sample_uniform_large_batch(fb.agent.buffer(), 4, 8, rng);
    std::vector<double> scores;
    for (std::size_t i : large.indices) scores.push_back(fb.surrogate[i]);
    const double scale = scale_factor(scores, scores, Scaling::mean, 8, 4);
    const double exact = std::accumulate(fb.surrogate.begin(), fb.surrogate.end(), 0.0) / 32.0;
    worst = std::max(worst, std::abs(scale - exact));
  }
  return {worst <= 1e-12, fmt("50 buffers with mB = N = 32, max |scale - mean| = %.2e", worst)};
}

Verdict tv_study_check() {
  const fs::path out = scratch("tv");
  std::string table;
  const int code = invoke({"tv-study", "--config", LABER_SOURCE_DIR "/configs/grid_tv.ini", "--out", out.string()},
                          &table);
  std::string detail;
  std::istringstream rows(table);
  std::string row;
  std::getline(rows, row);  // header
  while (std::getline(rows, row)) detail += (detail.empty() ? "" : "; ") + row;
  fs::remove_all(out);
  return {code == 0, "window,count,mean_surrogate,mean_uniform,p,verdict: " + detail};
}

Verdict convergence_check() {
  Rng rng(1010);
  const LeastSquaresProblem problem = LeastSquaresProblem::random(50, 6, rng);
  Eigen::VectorXd theta = problem.optimum;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < theta.size(); ++j) theta(j) += normal(rng);
  const std::vector<double> norms = problem.gradient_norms(theta);
  const double eta = 0.05 / *std::max_element(norms.begin(), norms.end());
  const std::vector<std::pair<const char*, Distribution>> dists = {
      {"uniform", Distribution::uniform(50)},
      {"optimal", optimal_distribution(norms)},
      {"random", Distribution(testing::random_histogram(50, rng))}};
  bool pass = true;
  std::string detail = "rel. errors at 1e5 trials:";
  for (const auto& [name, p] : dists) {
    const ConvergenceSpeed s = laber::convergence_speed(problem, p, eta, theta, 100'000, rng);
    const double err = std::abs(s.monte_carlo - s.analytic) / std::abs(s.analytic);
    pass = pass && err < 5e-2;
    detail += std::string(" ") + name + fmt("=%.2e", err);
  }
  return {pass, detail};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict smoke() {
  const cli::RunConfig base =
      cli::resolve_config(cli::RunConfig{}, fs::path(LABER_SOURCE_DIR "/configs/chain_smoke.ini"), {});
  const std::unique_ptr<Env> probe = base.env.make();
  const QTable oracle = value_iteration(*probe, base.agent.gamma, 1e-10);
  std::size_t non_terminal = 0;
  for (std::size_t s = 0; s < probe->num_states(); ++s) non_terminal += probe->is_terminal(s) ? 0 : 1;

  constexpr std::uint64_t kCheckEvery = 1'000;
  constexpr std::uint64_t kAucEvery = 500;
  constexpr std::uint64_t kAucHorizon = 10'000;
  bool pass = true;
  std::string detail;
  std::vector<double> uniform_auc;
  std::vector<double> laber_auc;
  for (const char* tag : {"uniform", "per", "ger", "laber-mean"}) {
    cli::Overrides ov;
    ov.sampler = tag;
    const cli::RunConfig cfg = cli::resolve_config(base, std::nullopt, ov);
    std::size_t solved = 0;
    std::vector<double> aucs;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Trainer trainer(cfg.env.make(), cfg.agent, seed);
      bool reached = false;
      double auc = 0.0;
      for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
        trainer.step();
        if (step <= kAucHorizon && step % kAucEvery == 0) {
          auc += static_cast<double>(policy_agreement(trainer.agent(), trainer.env(), oracle)) /
                 static_cast<double>(non_terminal) / static_cast<double>(kAucHorizon / kAucEvery);
        }
        if (step % kCheckEvery == 0 && matches_policy(trainer.agent(), trainer.env(), oracle)) reached = true;
        if (reached && step >= kAucHorizon) break;
      }
      solved += reached ? 1 : 0;
      aucs.push_back(auc);
    }
    pass = pass && solved >= 8;
    detail += std::string(detail.empty() ? "" : ", ") + tag + fmt(" %.0f/10", static_cast<double>(solved));
    if (std::string(tag) == "uniform") uniform_auc = aucs;
    if (std::string(tag) == "laber-mean") laber_auc = aucs;
  }
  const double mu = median(uniform_auc);
  const double ml = median(laber_auc);
  detail += fmt("; median AUC laber-mean=%.3f uniform=%.3f", ml, mu) +
            (ml >= mu ? " (laber-mean >= uniform)" : " (laber-mean < uniform, informational)");
  return {pass, detail};
}

Verdict determinism() {
  const fs::path root = scratch("determinism");
  bool pass = true;
  std::size_t compared = 0;
  for (const char* tag : {"uniform", "per", "ger", "laber-mean", "laber-lazy", "laber-max", "per-laber", "ger-laber"}) {
    for (const char* run : {"a", "b"}) {
      const int code = invoke({"train", "--config", LABER_SOURCE_DIR "/configs/chain_smoke.ini", "--sampler", tag,
                               "--steps", "3000", "--seed", "42", "--out", (root / tag / run).string()});
      pass = pass && code == 0;
    }
    const std::string a = slurp(root / tag / "a" / "learning_curve.csv");
    pass = pass && !a.empty() && a == slurp(root / tag / "b" / "learning_curve.csv");
    ++compared;
  }
  fs::remove_all(root);
  return {pass, fmt("%.0f samplers, 3000-step runs repeated with seed 42", static_cast<double>(compared))};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"variance study reproduces the two-sample example", variance_study},
      {"optimal distribution minimizes the variance term", optimality_lemma},
      {"importance-weighted gradients are unbiased", unbiasedness},
      {"per-sample gradients match finite differences", finite_differences},
      {"surrogate specializations", surrogate_specializations},
      {"surrogate bound on the gradient norm", surrogate_bound},
      {"sum-tree equals prefix search; chi-square", sum_tree},
      {"large-batch mean limit", mean_limit},
      {"TV study on the gridworld", tv_study_check},
      {"convergence speed identity", convergence_check},
      {"chain smoke test", smoke},
      {"determinism of train", determinism},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += v.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, v.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
