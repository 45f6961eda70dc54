#include "laber/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "laber/error.hpp"
#include "laber/sum_tree.hpp"

namespace laber {

namespace {

constexpr double kSumTolerance = 1e-9;

void check_entries(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, std::string(what) + " contains a non-finite value");
    if (v < 0.0) throw Error(ErrorKind::NegativePriority, std::string(what) + " contains a negative value");
  }
}

Distribution normalize(std::vector<double> mass, const char* what) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) throw Error(ErrorKind::AllZero, std::string(what) + " has no positive mass");
  if (!std::isfinite(total)) throw Error(ErrorKind::NonFinite, std::string(what) + " total overflows");
  for (double& v : mass) v /= total;
  return Distribution(std::move(mass));
}

}  // namespace

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw Error(ErrorKind::InvalidArgument, "distribution must have at least one entry");
  check_entries(probs_, "distribution");
  const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw Error(ErrorKind::InvalidArgument, "distribution sums to " + std::to_string(total));
  }
}

Distribution Distribution::uniform(std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "uniform distribution needs n >= 1");
  return Distribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

Distribution Distribution::point_mass(std::size_t n, std::size_t index) {
  if (index >= n) throw Error(ErrorKind::OutOfRange, "point mass index out of range");
  std::vector<double> probs(n, 0.0);
  probs[index] = 1.0;
  return Distribution(std::move(probs));
}

Distribution normalize_priorities(const PriorityVector& pv) {
  if (pv.values.empty()) throw Error(ErrorKind::InvalidArgument, "no priorities");
  check_entries(pv.values, "priorities");
  if (!std::isfinite(pv.alpha) || pv.alpha < 0.0 || pv.alpha > 1.0) {
    throw Error(ErrorKind::InvalidArgument, "alpha must lie in [0, 1]");
  }
  if (!std::isfinite(pv.c) || pv.c < 0.0) throw Error(ErrorKind::InvalidArgument, "c must be >= 0");

  std::vector<double> mass(pv.values.size());
  std::transform(pv.values.begin(), pv.values.end(), mass.begin(),
                 [&](double v) { return std::pow(v + pv.c, pv.alpha); });
  return normalize(std::move(mass), "transformed priorities");
}

WeightVector importance_weights(const Distribution& p, double beta) {
  const double n = static_cast<double>(p.size());
  WeightVector out{std::vector<double>(p.size()), beta};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) {
      throw Error(ErrorKind::ZeroProbability, "index " + std::to_string(i) + " has zero probability");
    }
    out.weights[i] = std::pow(1.0 / (n * p[i]), beta);
  }
  return out;
}

Distribution optimal_distribution(std::span<const double> grad_norms) {
  if (grad_norms.empty()) throw Error(ErrorKind::InvalidArgument, "no gradient norms");
  check_entries(grad_norms, "gradient norms");
  return normalize(std::vector<double>(grad_norms.begin(), grad_norms.end()), "gradient norms");
}

double expected_squared_norm(const Distribution& p, std::span<const double> grad_norms) {
  if (p.size() != grad_norms.size()) throw Error(ErrorKind::LengthMismatch, "distribution and norms differ in length");
  const double n = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grad_norms[i];
    if (g == 0.0) continue;
    if (p[i] <= 0.0) {
      throw Error(ErrorKind::ZeroProbability, "positive norm at index " + std::to_string(i) + " has p = 0");
    }
    acc += g * g / p[i];
  }
  return acc / (n * n);
}

double total_variation(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw Error(ErrorKind::LengthMismatch, "distributions differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return acc;
}

std::vector<std::size_t> sample_indices(const Distribution& p, std::size_t count, Rng& rng, SamplingMethod method) {
  if (count == 0) throw Error(ErrorKind::InvalidArgument, "sample count must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(count);

  if (method == SamplingMethod::sum_tree) {
    SumTree tree(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) tree.set(i, p[i]);
    for (std::size_t k = 0; k < count; ++k) out.push_back(tree.sample(uniform01(rng) * tree.total()));
    return out;
  }

  std::vector<double> cdf(p.size());
  std::partial_sum(p.probs().begin(), p.probs().end(), cdf.begin());
  // Last index with positive mass; draws at the very top of the range land here.
  std::size_t last = p.size() - 1;
  while (last > 0 && p[last] == 0.0) --last;
  for (std::size_t k = 0; k < count; ++k) {
    const double u = uniform01(rng) * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out.push_back(std::min(static_cast<std::size_t>(it - cdf.begin()), last));
  }
  return out;
}

}  // namespace laber
