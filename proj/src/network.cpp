#include "laber/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "laber/error.hpp"

namespace laber {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  if (name == "softmax") return Activation::softmax;
  throw Error(ErrorKind::InvalidArgument, "unknown activation '" + name + "'");
}

std::size_t group_size(const Network& net) {
  return net.softmax_group() == 0 ? net.output_dim() : net.softmax_group();
}

MatrixXd activate(const MatrixXd& z, Activation act, std::size_t group) {
  switch (act) {
    case Activation::identity: return z;
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::softmax: {
      MatrixXd q(z.rows(), z.cols());
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index start = 0; start < z.cols(); start += static_cast<Eigen::Index>(group)) {
          const auto block = z.row(i).segment(start, group);
          const double top = block.maxCoeff();
          const Eigen::RowVectorXd e = (block.array() - top).exp();
          q.row(i).segment(start, group) = e / e.sum();
        }
      }
      return q;
    }
  }
  return z;
}

// Elementwise activation derivative for the diagonal (hidden) activations.
MatrixXd activation_slope(const MatrixXd& z, Activation act) {
  if (act == Activation::relu) return (z.array() > 0.0).cast<double>().matrix();
  return MatrixXd::Ones(z.rows(), z.cols());
}

void check_targets(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                   const LossSpec& loss) {
  if (cache.post.size() != net.num_layers() + 1 || cache.output().cols() != static_cast<Eigen::Index>(net.output_dim())) {
    throw Error(ErrorKind::ShapeMismatch, "cache does not match network");
  }
  if (targets.size() != cache.batch_size()) {
    throw Error(ErrorKind::ShapeMismatch, "expected " + std::to_string(cache.batch_size()) + " targets, got " +
                                              std::to_string(targets.size()));
  }
  if (loss.kind == LossKind::categorical_ce) {
    if (net.layers().back().activation != Activation::softmax || loss.atoms == 0 || group_size(net) != loss.atoms) {
      throw Error(ErrorKind::ShapeMismatch, "categorical loss needs a softmax head with one group per action");
    }
    const std::size_t heads = net.output_dim() / loss.atoms;
    for (const Target& t : targets) {
      if (t.action >= heads || t.distribution.size() != loss.atoms) {
        throw Error(ErrorKind::ShapeMismatch, "categorical target does not match the head layout");
      }
    }
  } else {
    for (const Target& t : targets) {
      if (t.action >= net.output_dim()) throw Error(ErrorKind::ShapeMismatch, "target action out of range");
    }
  }
}

// Left-multiplies a loss gradient with respect to q by Sigma'(z)^T.
void apply_output_jacobian(const Network& net, const Eigen::RowVectorXd& z, const Eigen::RowVectorXd& q,
                           Eigen::RowVectorXd& g) {
  switch (net.layers().back().activation) {
    case Activation::identity: return;
    case Activation::relu: g = g.cwiseProduct((z.array() > 0.0).cast<double>().matrix()); return;
    case Activation::softmax: {
      const std::size_t group = group_size(net);
      for (Eigen::Index start = 0; start < g.size(); start += static_cast<Eigen::Index>(group)) {
        auto qs = q.segment(start, group);
        auto gs = g.segment(start, group);
        const double dot = qs.dot(gs);
        gs = qs.cwiseProduct(gs).array() - qs.array() * dot;
      }
      return;
    }
  }
}

// Offset of layer l's weights in the flattened parameter vector.
std::vector<std::size_t> parameter_offsets(const Network& net) {
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Layer& layer : net.layers()) {
    offsets.push_back(offset);
    offset += layer.weights.size() + layer.bias.size();
  }
  return offsets;
}

// Backpropagates one sample's output delta, calling sink(l, delta_l) per layer
// from last to first.
template <typename Sink>
void backprop_sample(const Network& net, const ForwardCache& cache, std::size_t sample, VectorXd delta, Sink&& sink) {
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    sink(l, delta);
    if (l == 0) break;
    const Layer& layer = net.layer(l);
    VectorXd back = layer.weights.transpose() * delta;
    if (net.layer(l - 1).activation == Activation::relu) {
      const auto z = cache.pre[l - 1].row(sample);
      for (Eigen::Index k = 0; k < back.size(); ++k) {
        if (!(z(k) > 0.0)) back(k) = 0.0;
      }
    }
    delta = std::move(back);
  }
}

}  // namespace

Network::Network(std::vector<Layer> layers, std::size_t softmax_group)
    : layers_(std::move(layers)), softmax_group_(softmax_group) {
  if (layers_.empty()) throw Error(ErrorKind::ShapeMismatch, "network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0 || layer.bias.size() != layer.weights.rows()) {
      throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " has inconsistent shapes");
    }
    if (l > 0 && layer.weights.cols() != layers_[l - 1].weights.rows()) {
      throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " input does not match previous output");
    }
    if (layer.activation == Activation::softmax && l + 1 != layers_.size()) {
      throw Error(ErrorKind::ShapeMismatch, "softmax is only allowed on the final layer");
    }
  }
  if (softmax_group_ != 0 && output_dim() % softmax_group_ != 0) {
    throw Error(ErrorKind::ShapeMismatch, "output size is not a multiple of the softmax group");
  }
}

Network Network::glorot(std::span<const std::size_t> dims, Activation hidden, Activation output, Rng& rng,
                        std::size_t softmax_group) {
  if (dims.size() < 2) throw Error(ErrorKind::ShapeMismatch, "need at least input and output dimensions");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer{MatrixXd(out, in), VectorXd::Zero(out), l + 2 == dims.size() ? output : hidden};
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = dist(rng);
    }
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers), softmax_group);
}

std::size_t Network::num_parameters() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

Eigen::VectorXd Network::parameters() const {
  VectorXd theta(num_parameters());
  Eigen::Index k = 0;
  for (const Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) theta(k++) = layer.weights(r, c);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) theta(k++) = layer.bias(r);
  }
  return theta;
}

void Network::set_parameters(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != num_parameters()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = theta(k++);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = theta(k++);
  }
}

void Network::add_scaled(double scale, const Eigen::VectorXd& direction) {
  if (static_cast<std::size_t>(direction.size()) != num_parameters()) {
    throw Error(ErrorKind::ShapeMismatch, "direction has the wrong length");
  }
  Eigen::Index k = 0;
  for (Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) += scale * direction(k++);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) += scale * direction(k++);
  }
}

bool Network::operator==(const Network& other) const {
  if (softmax_group_ != other.softmax_group_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& a = layers_[l];
    const Layer& b = other.layers_[l];
    if (a.activation != b.activation || a.weights.rows() != b.weights.rows() || a.weights.cols() != b.weights.cols() ||
        a.weights != b.weights || a.bias != b.bias) {
      return false;
    }
  }
  return true;
}

ForwardCache forward(const Network& net, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != static_cast<Eigen::Index>(net.input_dim())) {
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(inputs.cols()) + " columns, network expects " +
                                              std::to_string(net.input_dim()));
  }
  if (!inputs.allFinite()) throw Error(ErrorKind::NonFinite, "input contains non-finite values");

  ForwardCache cache;
  cache.post.push_back(inputs);
  const std::size_t group = group_size(net);
  for (const Layer& layer : net.layers()) {
    MatrixXd z = cache.post.back() * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    cache.post.push_back(activate(z, layer.activation, group));
    cache.pre.push_back(std::move(z));
  }
  if (!cache.output().allFinite()) throw Error(ErrorKind::NonFinite, "network output is not finite");
  return cache;
}

std::vector<double> losses(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                           const LossSpec& loss) {
  check_targets(net, cache, targets, loss);
  std::vector<double> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Target& t = targets[i];
    if (loss.kind == LossKind::categorical_ce) {
      const auto z = cache.last_preactivation().row(i).segment(t.action * loss.atoms, loss.atoms);
      const double top = z.maxCoeff();
      const double lse = top + std::log((z.array() - top).exp().sum());
      double acc = 0.0;
      for (std::size_t k = 0; k < loss.atoms; ++k) acc -= t.distribution[k] * (z(k) - lse);
      out[i] = acc;
    } else {
      const double d = cache.output()(i, t.action) - t.value;
      const double a = std::abs(d);
      out[i] = (loss.kind == LossKind::l2 || a <= 1.0) ? 0.5 * d * d : a - 0.5;
    }
  }
  return out;
}

std::vector<double> td_errors(const ForwardCache& cache, std::span<const Target> targets) {
  if (targets.size() != cache.batch_size()) throw Error(ErrorKind::ShapeMismatch, "target count mismatch");
  std::vector<double> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].action >= static_cast<std::size_t>(cache.output().cols())) {
      throw Error(ErrorKind::ShapeMismatch, "target action out of range");
    }
    out[i] = cache.output()(i, targets[i].action) - targets[i].value;
  }
  return out;
}

Eigen::MatrixXd output_delta(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                             const LossSpec& loss) {
  check_targets(net, cache, targets, loss);
  const auto out_dim = static_cast<Eigen::Index>(net.output_dim());
  MatrixXd delta = MatrixXd::Zero(targets.size(), out_dim);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Target& t = targets[i];
    if (loss.kind == LossKind::categorical_ce) {
      // Softmax followed by cross-entropy: d loss / d z = q - y on the block.
      const auto start = static_cast<Eigen::Index>(t.action * loss.atoms);
      for (std::size_t k = 0; k < loss.atoms; ++k) {
        delta(i, start + k) = cache.output()(i, start + k) - t.distribution[k];
      }
      continue;
    }
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(out_dim);
    const double d = cache.output()(i, t.action) - t.value;
    g(t.action) = loss.kind == LossKind::l2 ? d : std::clamp(d, -1.0, 1.0);
    apply_output_jacobian(net, cache.last_preactivation().row(i), cache.output().row(i), g);
    delta.row(i) = g;
  }
  return delta;
}

Eigen::MatrixXd per_sample_gradients(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                                     const LossSpec& loss) {
  const MatrixXd delta_out = output_delta(net, cache, targets, loss);
  const std::vector<std::size_t> offsets = parameter_offsets(net);
  MatrixXd grads(targets.size(), net.num_parameters());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    backprop_sample(net, cache, i, delta_out.row(i).transpose(), [&](std::size_t l, const VectorXd& delta) {
      const auto a = cache.post[l].row(i);
      const Layer& layer = net.layer(l);
      Eigen::Index k = static_cast<Eigen::Index>(offsets[l]);
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) grads(i, k++) = delta(r) * a(c);
      }
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) grads(i, k++) = delta(r);
    });
  }
  return grads;
}

std::vector<double> per_sample_gradient_norms(const Network& net, const ForwardCache& cache,
                                              std::span<const Target> targets, const LossSpec& loss) {
  const MatrixXd delta_out = output_delta(net, cache, targets, loss);
  std::vector<double> norms(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double acc = 0.0;
    backprop_sample(net, cache, i, delta_out.row(i).transpose(), [&](std::size_t l, const VectorXd& delta) {
      acc += delta.squaredNorm() * (cache.post[l].row(i).squaredNorm() + 1.0);
    });
    norms[i] = std::sqrt(acc);
  }
  return norms;
}

Eigen::VectorXd weighted_gradient(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                                  const LossSpec& loss, std::span<const double> coefficients) {
  if (coefficients.size() != targets.size()) throw Error(ErrorKind::ShapeMismatch, "one coefficient per sample");
  MatrixXd delta = output_delta(net, cache, targets, loss);
  for (std::size_t i = 0; i < coefficients.size(); ++i) delta.row(i) *= coefficients[i];

  const std::vector<std::size_t> offsets = parameter_offsets(net);
  VectorXd grad(net.num_parameters());
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const Layer& layer = net.layer(l);
    const MatrixXd gw = delta.transpose() * cache.post[l];
    Eigen::Index k = static_cast<Eigen::Index>(offsets[l]);
    for (Eigen::Index r = 0; r < gw.rows(); ++r) {
      for (Eigen::Index c = 0; c < gw.cols(); ++c) grad(k++) = gw(r, c);
    }
    grad.segment(k, layer.bias.size()) = delta.colwise().sum().transpose();
    if (l == 0) break;
    delta = (delta * layer.weights).cwiseProduct(activation_slope(cache.pre[l - 1], net.layer(l - 1).activation));
  }
  return grad;
}

std::vector<double> surrogate_norm(const Network& net, const ForwardCache& cache, std::span<const Target> targets,
                                   const LossSpec& loss) {
  const MatrixXd delta = output_delta(net, cache, targets, loss);
  std::vector<double> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out[i] = delta.row(i).norm();
  return out;
}

Eigen::MatrixXd last_preactivation_jacobian(const Network& net, const ForwardCache& cache, std::size_t sample) {
  if (sample >= cache.batch_size()) throw Error(ErrorKind::OutOfRange, "sample index out of range");
  const std::vector<std::size_t> offsets = parameter_offsets(net);
  const auto out_dim = static_cast<Eigen::Index>(net.output_dim());
  MatrixXd jac = MatrixXd::Zero(out_dim, net.num_parameters());
  for (Eigen::Index k = 0; k < out_dim; ++k) {
    backprop_sample(net, cache, sample, VectorXd::Unit(out_dim, k), [&](std::size_t l, const VectorXd& delta) {
      const auto a = cache.post[l].row(sample);
      const Layer& layer = net.layer(l);
      Eigen::Index p = static_cast<Eigen::Index>(offsets[l]);
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) jac(k, p++) = delta(r) * a(c);
      }
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) jac(k, p++) = delta(r);
    });
  }
  return jac;
}

Eigen::VectorXd finite_difference_loss_gradient(const Network& net, const Eigen::VectorXd& input,
                                                const Target& target, const LossSpec& loss, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "step must be positive");
  Network probe = net;
  const VectorXd theta = net.parameters();
  const MatrixXd x = input.transpose();
  const std::span<const Target> one(&target, 1);
  auto loss_at = [&](const VectorXd& params) {
    probe.set_parameters(params);
    return losses(probe, forward(probe, x), one, loss).front();
  };
  VectorXd grad(theta.size());
  VectorXd shifted = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    shifted(j) = theta(j) + h;
    const double up = loss_at(shifted);
    shifted(j) = theta(j) - h;
    const double down = loss_at(shifted);
    shifted(j) = theta(j);
    grad(j) = (up - down) / (2.0 * h);
  }
  return grad;
}

void save_network(const Network& net, std::ostream& out) {
  out << "laber-network 1 " << net.num_layers() << ' ' << net.softmax_group() << '\n';
  for (const Layer& layer : net.layers()) {
    out << layer.weights.cols() << ' ' << layer.weights.rows() << ' ' << activation_name(layer.activation) << '\n';
  }
  const VectorXd theta = net.parameters();
  char buf[32];
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const auto res = std::to_chars(buf, buf + sizeof buf, theta(k));
    out.write(buf, res.ptr - buf);
    out.put('\n');
  }
  if (!out) throw Error(ErrorKind::IoError, "failed to write network");
}

Network load_network(std::istream& in) {
  std::string magic;
  int version = 0;
  std::size_t num_layers = 0;
  std::size_t group = 0;
  if (!(in >> magic >> version >> num_layers >> group) || magic != "laber-network" || version != 1) {
    throw Error(ErrorKind::IoError, "not a network file");
  }
  std::vector<Layer> layers;
  for (std::size_t l = 0; l < num_layers; ++l) {
    Eigen::Index in_dim = 0;
    Eigen::Index out_dim = 0;
    std::string act;
    if (!(in >> in_dim >> out_dim >> act) || in_dim <= 0 || out_dim <= 0) {
      throw Error(ErrorKind::IoError, "malformed layer header");
    }
    layers.push_back(Layer{MatrixXd::Zero(out_dim, in_dim), VectorXd::Zero(out_dim), parse_activation(act)});
  }
  Network net(std::move(layers), group);
  VectorXd theta(net.num_parameters());
  std::string token;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    if (!(in >> token)) throw Error(ErrorKind::IoError, "truncated parameter list");
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
      throw Error(ErrorKind::IoError, "bad parameter value '" + token + "'");
    }
    theta(k) = v;
  }
  net.set_parameters(theta);
  return net;
}

}  // namespace laber
