#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "laber/error.hpp"

#include "laber/network.hpp"
#include "laber/rng.hpp"

namespace laber::testing {

inline std::vector<double> random_positive(std::size_t n, Rng& rng, double lo = 0.01, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Random biases too, so that no unit sits at an exact ReLU kink.
inline Network random_network(const std::vector<std::size_t>& dims, Activation output, Rng& rng,
                              std::size_t softmax_group = 0) {
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.weights = random_matrix(dims[l + 1], dims[l], rng, 1.0 / std::sqrt(static_cast<double>(dims[l])));
    layer.bias = random_matrix(dims[l + 1], 1, rng, 0.3);
    layer.activation = l + 2 == dims.size() ? output : Activation::relu;
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers), softmax_group);
}

inline std::vector<double> random_histogram(std::size_t n, Rng& rng) {
  std::vector<double> v = random_positive(n, rng);
  double total = 0.0;
  for (double x : v) total += x;
  for (double& x : v) x /= total;
  return v;
}

// Two-sided critical value of a chi-square statistic with `dof` degrees of
// freedom at roughly the 1e-4 level (Wilson-Hilferty approximation).
inline double chi_square_bound(std::size_t dof) {
  const double k = static_cast<double>(dof);
  const double z = 3.719;
  const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

struct Case {
  Network net;
  Eigen::MatrixXd inputs;
  std::vector<Target> targets;
  LossSpec loss;
};

inline Case make_case(LossKind kind, Rng& rng, std::size_t batch = 3) {
  std::uniform_int_distribution<std::size_t> width(2, 6);
  const std::size_t in = width(rng);
  const std::size_t hidden = width(rng);
  Case c;
  if (kind == LossKind::categorical_ce) {
    const std::size_t atoms = width(rng);
    const std::size_t actions = 2;
    c.net = random_network({in, hidden, actions * atoms}, Activation::softmax, rng, atoms);
    c.loss = LossSpec{kind, atoms};
    for (std::size_t i = 0; i < batch; ++i) {
      c.targets.push_back(Target{i % actions, 0.0, laber::testing::random_histogram(atoms, rng)});
    }
  } else {
    const std::size_t out = width(rng);
    c.net = random_network({in, hidden, hidden, out}, Activation::identity, rng);
    c.loss = LossSpec{kind, 0};
    std::normal_distribution<double> y(0.0, 2.0);
    for (std::size_t i = 0; i < batch; ++i) c.targets.push_back(Target{i % out, y(rng), {}});
  }
  c.inputs = random_matrix(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in), rng);
  return c;
}

// Kind of the Error thrown by `f`, or nothing if it returns normally.
template <typename F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace laber::testing
