#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "laber/rng.hpp"

namespace laber {

// Probability vector over buffer indices. Construction validates that every
// entry is finite and non-negative and that the entries sum to one.
class Distribution {
 public:
  explicit Distribution(std::vector<double> probs);

  static Distribution uniform(std::size_t n);
  static Distribution point_mass(std::size_t n, std::size_t index);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
};

// Raw priorities together with the (value + c)^alpha transform.
struct PriorityVector {
  std::vector<double> values;
  double alpha = 1.0;
  double c = 0.0;
};

struct WeightVector {
  std::vector<double> weights;
  double beta = 1.0;
};

// probs_i = (values_i + c)^alpha / sum_j (values_j + c)^alpha.
// Throws NonFinite, NegativePriority, or AllZero (no silent uniform fallback).
Distribution normalize_priorities(const PriorityVector& pv);

// weights_i = (1 / (N p_i))^beta. Throws ZeroProbability.
WeightVector importance_weights(const Distribution& p, double beta = 1.0);

// The variance-minimizing distribution, proportional to per-sample gradient norms.
Distribution optimal_distribution(std::span<const double> grad_norms);

// (1/N^2) sum_i g_i^2 / p_i, i.e. E_{i~p}[G_i^T G_i] with G_i = grad_i / (N p_i).
double expected_squared_norm(const Distribution& p, std::span<const double> grad_norms);

// sum_i |p_i - q_i|, in [0, 2].
double total_variation(const Distribution& p, const Distribution& q);

enum class SamplingMethod { inverse_cdf, sum_tree };

// B i.i.d. draws with replacement. Both methods consume exactly one uniform per
// draw and therefore agree on the index sequence for the same generator state.
std::vector<std::size_t> sample_indices(const Distribution& p, std::size_t count, Rng& rng,
                                        SamplingMethod method = SamplingMethod::inverse_cdf);

}  // namespace laber
