#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "laber/error.hpp"
#include "laber/network.hpp"
#include "laber/sampling.hpp"

using namespace laber;
using laber::testing::error_kind;
using laber::testing::random_matrix;
using laber::testing::random_network;
using laber::testing::Case;
using laber::testing::make_case;
using laber::testing::softmax;

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& m) { return m.cwiseMax(0.0); }

// Straightforward per-sample evaluation with explicit loops.
Eigen::VectorXd reference_forward(const Network& net, const Eigen::VectorXd& x) {
  Eigen::VectorXd a = x;
  for (const Layer& layer : net.layers()) {
    Eigen::VectorXd z(layer.weights.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      double acc = layer.bias(i);
      for (Eigen::Index j = 0; j < a.size(); ++j) acc += layer.weights(i, j) * a(j);
      z(i) = acc;
    }
    a = layer.activation == Activation::relu ? Eigen::VectorXd(relu(z)) : z;
  }
  return a;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace

TEST_CASE("forward of a zero network is zero") {
  Layer l1{Eigen::MatrixXd::Zero(4, 3), Eigen::VectorXd::Zero(4), Activation::relu};
  Layer l2{Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Zero(2), Activation::identity};
  const Network net({l1, l2});
  Rng rng(1);
  const ForwardCache cache = forward(net, random_matrix(5, 3, rng));
  CHECK(cache.output().isZero(0.0));
}

TEST_CASE("forward of a single affine unit") {
  const Network net({Layer{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Constant(1, 1.0), Activation::identity}});
  const ForwardCache cache = forward(net, Eigen::MatrixXd::Constant(1, 1, 3.0));
  CHECK(cache.output()(0, 0) == 7.0);
}

TEST_CASE("forward matches a loop-based evaluation") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Network net = random_network({5, 7, 3}, Activation::identity, rng);
    const Eigen::MatrixXd x = random_matrix(4, 5, rng);
    const ForwardCache cache = forward(net, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::VectorXd ref = reference_forward(net, x.row(i).transpose());
      CHECK((cache.output().row(i).transpose() - ref).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("forward applies softmax per group") {
  Rng rng(3);
  const Network net = random_network({3, 6}, Activation::softmax, rng, 3);
  const ForwardCache cache = forward(net, random_matrix(2, 3, rng));
  for (Eigen::Index i = 0; i < 2; ++i) {
    CHECK(cache.output().row(i).head(3).sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(cache.output().row(i).tail(3).sum() == doctest::Approx(1.0).epsilon(1e-14));
    const Eigen::VectorXd z = cache.last_preactivation().row(i).transpose();
    CHECK(rel_err(cache.output().row(i).head(3).transpose(), softmax(z.head(3))) <= 1e-14);
  }
}

TEST_CASE("forward validates shapes and values") {
  Rng rng(4);
  const Network net = random_network({3, 2}, Activation::identity, rng);
  CHECK(error_kind([&] { forward(net, Eigen::MatrixXd::Zero(1, 4)); }) == ErrorKind::ShapeMismatch);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(1, 3);
  bad(0, 1) = NAN;
  CHECK(error_kind([&] { forward(net, bad); }) == ErrorKind::NonFinite);
  Layer hidden_softmax{Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2), Activation::softmax};
  Layer out{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1), Activation::identity};
  CHECK(error_kind([&] { Network({hidden_softmax, out}); }).has_value());
  Layer mismatched{Eigen::MatrixXd::Zero(1, 5), Eigen::VectorXd::Zero(1), Activation::identity};
  CHECK(error_kind([&] { Network({hidden_softmax, mismatched}); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("forward is deterministic") {
  Rng rng(5);
  const Network net = random_network({4, 8, 3}, Activation::identity, rng);
  const Eigen::MatrixXd x = random_matrix(6, 4, rng);
  CHECK(forward(net, x).output() == forward(net, x).output());
}

TEST_CASE("gradient norm is zero at zero residual") {
  Rng rng(6);
  const Network net = random_network({3, 5, 2}, Activation::identity, rng);
  const Eigen::MatrixXd x = random_matrix(1, 3, rng);
  const ForwardCache cache = forward(net, x);
  const std::vector<Target> t{Target{1, cache.output()(0, 1), {}}};
  CHECK(per_sample_gradient_norms(net, cache, t, {LossKind::l2, 0})[0] == 0.0);
  const Eigen::VectorXd fd = finite_difference_loss_gradient(net, x.row(0).transpose(), t[0], {LossKind::l2, 0});
  CHECK(fd.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("gradient norm of a single linear layer is |delta| * ||(x, 1)||") {
  Rng rng(7);
  const Network net = random_network({4, 3}, Activation::identity, rng);
  const Eigen::MatrixXd x = random_matrix(5, 4, rng);
  const ForwardCache cache = forward(net, x);
  std::vector<Target> t;
  for (int i = 0; i < 5; ++i) t.push_back(Target{static_cast<std::size_t>(i % 3), 0.5 * i, {}});
  const std::vector<double> norms = per_sample_gradient_norms(net, cache, t, {LossKind::l2, 0});
  const std::vector<double> delta = td_errors(cache, t);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const double expected = std::abs(delta[i]) * std::sqrt(x.row(i).squaredNorm() + 1.0);
    CHECK(norms[i] == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("quadratic single-parameter model recovers the exact derivative") {
  const Network net({Layer{Eigen::MatrixXd::Constant(1, 1, 1.5), Eigen::VectorXd::Zero(1), Activation::identity}});
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 2.0);
  const Target t{0, 1.0, {}};
  // loss = 0.5 (w x + b - y)^2 -> d/dw = (w x - y) x, d/db = w x - y
  const Eigen::VectorXd fd = finite_difference_loss_gradient(net, x, t, {LossKind::l2, 0});
  CHECK(fd(0) == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(fd(1) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("per-sample gradients match finite differences for every loss") {
  Rng rng(8);
  for (LossKind kind : {LossKind::l2, LossKind::huber, LossKind::categorical_ce}) {
    int checked = 0;
    while (checked < 100) {
      Case c = make_case(kind, rng, 2);
      const ForwardCache cache = forward(c.net, c.inputs);
      if (kind == LossKind::huber) {
        // Stay away from the Huber kink, where central differences are inexact.
        bool near_kink = false;
        for (double d : td_errors(cache, c.targets)) near_kink = near_kink || std::abs(std::abs(d) - 1.0) < 1e-3;
        if (near_kink) continue;
      }
      const Eigen::MatrixXd grads = per_sample_gradients(c.net, cache, c.targets, c.loss);
      for (Eigen::Index i = 0; i < c.inputs.rows(); ++i) {
        const Eigen::VectorXd fd =
            finite_difference_loss_gradient(c.net, c.inputs.row(i).transpose(), c.targets[i], c.loss);
        CHECK(rel_err(grads.row(i).transpose(), fd) < 1e-5);
      }
      ++checked;
    }
  }
}

TEST_CASE("per-sample gradients are consistent with norms and the batch gradient") {
  Rng rng(9);
  for (LossKind kind : {LossKind::l2, LossKind::huber, LossKind::categorical_ce}) {
    Case c = make_case(kind, rng, 7);
    const ForwardCache cache = forward(c.net, c.inputs);
    const Eigen::MatrixXd grads = per_sample_gradients(c.net, cache, c.targets, c.loss);
    const std::vector<double> norms = per_sample_gradient_norms(c.net, cache, c.targets, c.loss);
    for (Eigen::Index i = 0; i < grads.rows(); ++i) {
      CHECK(std::abs(grads.row(i).norm() - norms[i]) <= 1e-12 * std::max(1.0, norms[i]));
    }
    const std::vector<double> coeffs(7, 1.0 / 7.0);
    const Eigen::VectorXd batch = weighted_gradient(c.net, cache, c.targets, c.loss, coeffs);
    CHECK((batch - grads.colwise().mean().transpose()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("surrogate of identity output with L2 is the absolute TD error") {
  Rng rng(10);
  Case c = make_case(LossKind::l2, rng, 9);
  const ForwardCache cache = forward(c.net, c.inputs);
  const std::vector<double> s = surrogate_norm(c.net, cache, c.targets, c.loss);
  const std::vector<double> d = td_errors(cache, c.targets);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == std::abs(d[i]));
}

TEST_CASE("surrogate of identity output with Huber is the clipped TD error") {
  const Network net({Layer{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1), Activation::identity}});
  const ForwardCache cache = forward(net, Eigen::MatrixXd::Zero(2, 1));
  const std::vector<Target> t{Target{0, -0.3, {}}, Target{0, -7.0, {}}};
  const std::vector<double> s = surrogate_norm(net, cache, t, {LossKind::huber, 0});
  CHECK(s[0] == 0.3);
  CHECK(s[1] == 1.0);

  Rng rng(11);
  Case c = make_case(LossKind::huber, rng, 20);
  const ForwardCache big = forward(c.net, c.inputs);
  const std::vector<double> huber = surrogate_norm(c.net, big, c.targets, c.loss);
  const std::vector<double> l2 = surrogate_norm(c.net, big, c.targets, {LossKind::l2, 0});
  const std::vector<double> d = td_errors(big, c.targets);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(huber[i] == std::min(std::abs(d[i]), 1.0));
    if (std::abs(d[i]) <= 1.0) CHECK(huber[i] == l2[i]);
  }
}

TEST_CASE("categorical surrogate is the per-atom L2 norm of q - y") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Case c = make_case(LossKind::categorical_ce, rng, 4);
    const ForwardCache cache = forward(c.net, c.inputs);
    const std::vector<double> s = surrogate_norm(c.net, cache, c.targets, c.loss);
    const Eigen::MatrixXd delta = output_delta(c.net, cache, c.targets, c.loss);
    const std::size_t atoms = c.loss.atoms;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Eigen::VectorXd z = cache.last_preactivation().row(static_cast<Eigen::Index>(i)).transpose();
      const Eigen::VectorXd q = softmax(z.segment(static_cast<Eigen::Index>(c.targets[i].action * atoms),
                                                  static_cast<Eigen::Index>(atoms)));
      double acc = 0.0;
      for (std::size_t k = 0; k < atoms; ++k) acc += std::pow(q(static_cast<Eigen::Index>(k)) - c.targets[i].distribution[k], 2);
      CHECK(std::abs(s[i] - std::sqrt(acc)) <= 1e-10);
      // d loss / d z is q - y on the selected block and zero elsewhere
      for (Eigen::Index k = 0; k < delta.cols(); ++k) {
        const auto block = static_cast<std::size_t>(k) / atoms;
        const double expected = block == c.targets[i].action
                                    ? q(k % static_cast<Eigen::Index>(atoms)) - c.targets[i].distribution[k % atoms]
                                    : 0.0;
        CHECK(std::abs(delta(static_cast<Eigen::Index>(i), k) - expected) <= 1e-12);
      }
    }
  }
}

TEST_CASE("normalized surrogate does not depend on a constant factor") {
  Rng rng(13);
  Case c = make_case(LossKind::l2, rng, 6);
  const std::vector<double> s = surrogate_norm(c.net, forward(c.net, c.inputs), c.targets, c.loss);
  const Distribution p = optimal_distribution(s);
  std::vector<double> scaled = s;
  for (double& x : scaled) x *= 37.5;
  const Distribution q = optimal_distribution(scaled);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-14));
}

TEST_CASE("last pre-activation Jacobian matches finite differences") {
  Rng rng(14);
  const Network net = random_network({3, 4, 2}, Activation::identity, rng);
  const Eigen::MatrixXd x = random_matrix(1, 3, rng);
  const Eigen::MatrixXd jac = last_preactivation_jacobian(net, forward(net, x), 0);
  const Eigen::VectorXd theta = net.parameters();
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    Network plus = net;
    Network minus = net;
    Eigen::VectorXd tp = theta;
    Eigen::VectorXd tm = theta;
    tp(j) += h;
    tm(j) -= h;
    plus.set_parameters(tp);
    minus.set_parameters(tm);
    const Eigen::VectorXd col =
        (forward(plus, x).last_preactivation().row(0) - forward(minus, x).last_preactivation().row(0)).transpose() /
        (2.0 * h);
    CHECK((jac.col(j) - col).cwiseAbs().maxCoeff() <= 1e-7);
  }
}

TEST_CASE("gradient norm is bounded by surrogate times Jacobian operator norm") {
  Rng rng(15);
  for (LossKind kind : {LossKind::l2, LossKind::huber, LossKind::categorical_ce}) {
    for (int trial = 0; trial < 30; ++trial) {
      Case c = make_case(kind, rng, 3);
      const ForwardCache cache = forward(c.net, c.inputs);
      const std::vector<double> norms = per_sample_gradient_norms(c.net, cache, c.targets, c.loss);
      const std::vector<double> s = surrogate_norm(c.net, cache, c.targets, c.loss);
      for (std::size_t i = 0; i < norms.size(); ++i) {
        const Eigen::MatrixXd jac = last_preactivation_jacobian(c.net, cache, i);
        const double op = Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues()(0);
        CHECK(norms[i] <= s[i] * op * (1.0 + 1e-12) + 1e-15);
      }
    }
  }
}

TEST_CASE("network parameters round-trip") {
  Rng rng(16);
  Network net = random_network({3, 5, 4}, Activation::softmax, rng, 2);
  const Eigen::VectorXd theta = net.parameters();
  CHECK(static_cast<std::size_t>(theta.size()) == net.num_parameters());
  CHECK(net.num_parameters() == 3 * 5 + 5 + 5 * 4 + 4);
  Network copy = net;
  copy.add_scaled(0.5, Eigen::VectorXd::Ones(theta.size()));
  CHECK((copy.parameters() - theta).isApprox(Eigen::VectorXd::Constant(theta.size(), 0.5)));
  copy.set_parameters(theta);
  CHECK(copy == net);

  std::stringstream text;
  save_network(net, text);
  const Network loaded = load_network(text);
  CHECK(loaded == net);
  CHECK(loaded.softmax_group() == 2);
  CHECK(error_kind([&] { copy.set_parameters(Eigen::VectorXd::Zero(3)); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("glorot initialization stays within its limit") {
  Rng rng(17);
  const std::vector<std::size_t> dims{10, 20, 3};
  const Network net = Network::glorot(dims, Activation::relu, Activation::identity, rng);
  CHECK(net.layer(0).weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 30.0));
  CHECK(net.layer(1).weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 23.0));
  CHECK(net.layer(0).bias.isZero(0.0));
}
