#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "laber/rng.hpp"

namespace laber {

enum class Activation { relu, identity, softmax };

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  Activation activation = Activation::identity;
};

// Fully connected feed-forward network. Softmax is only allowed on the final
// layer; it is applied independently to contiguous output blocks of
// `softmax_group` units (0 means the whole output), which is how a categorical
// head produces one histogram per action.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers, std::size_t softmax_group = 0);

  // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static Network glorot(std::span<const std::size_t> dims, Activation hidden, Activation output, Rng& rng,
                        std::size_t softmax_group = 0);

  std::size_t input_dim() const { return layers_.front().weights.cols(); }
  std::size_t output_dim() const { return layers_.back().weights.rows(); }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_parameters() const;
  std::size_t softmax_group() const { return softmax_group_; }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }
  const std::vector<Layer>& layers() const { return layers_; }

  // Flattened parameters: for each layer, weights row-major then bias.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);
  // theta <- theta + scale * direction
  void add_scaled(double scale, const Eigen::VectorXd& direction);

  bool operator==(const Network& other) const;

 private:
  std::vector<Layer> layers_;
  std::size_t softmax_group_ = 0;
};

// Per-sample activations; rows index samples. `pre[l]` holds the layer-l
// pre-activation and `post[l + 1]` its activation, with `post[0]` the input.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;

  std::size_t batch_size() const { return post.empty() ? 0 : post.front().rows(); }
  const Eigen::MatrixXd& last_preactivation() const { return pre.back(); }
  const Eigen::MatrixXd& output() const { return post.back(); }
};

ForwardCache forward(const Network& net, const Eigen::MatrixXd& inputs);

enum class LossKind { l2, huber, categorical_ce };

// L2 is 0.5 * delta^2 and Huber uses a unit threshold, so that the gradient
// with respect to the selected output is delta or clip(delta, -1, 1).
struct LossSpec {
  LossKind kind = LossKind::l2;
  std::size_t atoms = 0;  // categorical block size; must match the softmax group
};

// `action` selects the output unit (scalar losses) or the histogram block
// (categorical loss).
struct Target {
  std::size_t action = 0;
  double value = 0.0;
  std::vector<double> distribution;
};

// Per-sample loss values.
std::vector<double> losses(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                           const LossSpec& loss);

// Signed residual Q(x_i) - y_i for scalar losses.
std::vector<double> td_errors(const ForwardCache& cache, std::span<const Target> targets);

// d loss / d z for the last pre-activation z, one row per sample. For softmax
// with the categorical loss this is exactly q - y on the selected block.
Eigen::MatrixXd output_delta(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                             const LossSpec& loss);

// Exact per-sample gradients over all parameters (samples x |theta|).
Eigen::MatrixXd per_sample_gradients(const Network& net, const ForwardCache& cache,
                                     std::span<const Target> targets, const LossSpec& loss);

// Exact per-sample gradient L2 norms. Uses ||delta a^T||_F = ||delta|| ||a||
// per layer, so no gradient vector is materialized.
std::vector<double> per_sample_gradient_norms(const Network& net, const ForwardCache& cache,
                                              std::span<const Target> targets, const LossSpec& loss);

// sum_i coefficients_i * grad_theta loss_i, computed batched.
Eigen::VectorXd weighted_gradient(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                                  const LossSpec& loss, std::span<const double> coefficients);

// ||Sigma'(z_i) grad_q loss_i||_2 from forward quantities only (K = 1).
std::vector<double> surrogate_norm(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                                   const LossSpec& loss);

// Jacobian of the last pre-activation with respect to theta for one sample
// (output_dim x |theta|).
Eigen::MatrixXd last_preactivation_jacobian(const Network& net, const ForwardCache& cache, std::size_t sample);

// Central differences of the loss of a single sample, one coordinate at a time.
Eigen::VectorXd finite_difference_loss_gradient(const Network& net, const Eigen::VectorXd& input,
                                                const Target& target, const LossSpec& loss, double h = 1e-5);

// Text fixture format: a header line, one line per layer, then |theta| values.
void save_network(const Network& net, std::ostream& out);
Network load_network(std::istream& in);

}  // namespace laber
