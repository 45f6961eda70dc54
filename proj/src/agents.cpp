#include "laber/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "laber/binary_io.hpp"
#include "laber/error.hpp"

namespace laber {

namespace {

constexpr char kAgentMagic[] = "LBAG0001";
constexpr char kTrainerMagic[] = "LBTR0001";

std::string magic(const char* m) { return std::string(m, 8); }

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> row_vector(const Eigen::MatrixXd& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

Eigen::MatrixXd single_row(std::span<const double> x) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) m(0, static_cast<Eigen::Index>(j)) = x[j];
  return m;
}

double scalar_target(const Transition& t, std::span<const double> next_q, double gamma) {
  if (t.done) return t.reward;
  return t.reward + gamma * *std::max_element(next_q.begin(), next_q.end());
}

std::vector<double> project(const Transition& t, std::span<const double> next_probs, double gamma,
                            const AtomSupport& support) {
  const std::size_t n = support.atoms;
  std::vector<double> out(n, 0.0);
  auto deposit = [&](double value, double mass) {
    const double tz = std::clamp(value, support.v_min, support.v_max);
    const double b = std::clamp((tz - support.v_min) / support.delta(), 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(b));
    const auto hi = static_cast<std::size_t>(std::ceil(b));
    if (lo == hi) {
      out[lo] += mass;
    } else {
      out[lo] += mass * (static_cast<double>(hi) - b);
      out[hi] += mass * (b - static_cast<double>(lo));
    }
  };
  if (t.done) {
    deposit(t.reward, 1.0);
    return out;
  }
  const std::vector<double> q = categorical_q_values(next_probs, support);
  const std::size_t best = argmax(q);
  for (std::size_t j = 0; j < n; ++j) deposit(t.reward + gamma * support.atom(j), next_probs[best * n + j]);
  return out;
}

ForwardCache select_rows(const ForwardCache& cache, std::span<const std::size_t> rows) {
  auto pick = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
    return out;
  };
  ForwardCache out;
  for (const auto& m : cache.pre) out.pre.push_back(pick(m));
  for (const auto& m : cache.post) out.post.push_back(pick(m));
  return out;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename T>
std::string rng_state(const T& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

template <typename T>
void set_rng_state(T& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw Error(ErrorKind::IoError, "corrupt generator state");
}

}  // namespace

SamplerTag parse_sampler(std::string_view tag) {
  if (tag == "uniform") return {SamplerKind::uniform, std::nullopt};
  if (tag == "per") return {SamplerKind::per, std::nullopt};
  if (tag == "ger") return {SamplerKind::ger, std::nullopt};
  if (tag == "laber-mean") return {SamplerKind::laber, Scaling::mean};
  if (tag == "laber-lazy") return {SamplerKind::laber, Scaling::lazy};
  if (tag == "laber-max") return {SamplerKind::laber, Scaling::max};
  if (tag == "per-laber") return {SamplerKind::per_laber, std::nullopt};
  if (tag == "ger-laber") return {SamplerKind::ger_laber, std::nullopt};
  throw Error(ErrorKind::InvalidArgument, "unknown sampler '" + std::string(tag) + "'");
}

std::string to_string(Scaling scaling) {
  switch (scaling) {
    case Scaling::mean: return "mean";
    case Scaling::lazy: return "lazy";
    case Scaling::max: return "max";
  }
  return "?";
}

Scaling parse_scaling(std::string_view name) {
  if (name == "mean") return Scaling::mean;
  if (name == "lazy") return Scaling::lazy;
  if (name == "max") return Scaling::max;
  throw Error(ErrorKind::InvalidArgument, "unknown scaling '" + std::string(name) + "'");
}

std::string sampler_name(SamplerKind kind, Scaling scaling) {
  switch (kind) {
    case SamplerKind::uniform: return "uniform";
    case SamplerKind::per: return "per";
    case SamplerKind::ger: return "ger";
    case SamplerKind::laber: return "laber-" + to_string(scaling);
    case SamplerKind::per_laber: return "per-laber";
    case SamplerKind::ger_laber: return "ger-laber";
  }
  return "?";
}

bool uses_priorities(SamplerKind kind) {
  return kind == SamplerKind::per || kind == SamplerKind::ger || kind == SamplerKind::per_laber ||
         kind == SamplerKind::ger_laber;
}

bool uses_large_batch(SamplerKind kind) {
  return kind == SamplerKind::laber || kind == SamplerKind::per_laber || kind == SamplerKind::ger_laber;
}

LossSpec AgentConfig::loss_spec() const {
  if (distributional) return LossSpec{LossKind::categorical_ce, atoms};
  return LossSpec{loss, 0};
}

void AgentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma must lie in [0, 1)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (multiplier == 0) fail("m must be >= 1");
  if (target_update_period == 0) fail("target_update_period must be >= 1");
  if (!distributional && loss == LossKind::categorical_ce) fail("loss: categorical_ce needs distributional = true");
  if (distributional && atoms < 2) fail("atoms must be >= 2");
  if (distributional && !(v_min < v_max)) fail("v_min must be below v_max");
  for (std::size_t h : hidden) {
    if (h == 0) fail("hidden layer widths must be >= 1");
  }
  if (!(per_alpha >= 0.0 && per_alpha <= 1.0)) fail("per_alpha must lie in [0, 1]");
  if (!(ger_alpha >= 0.0 && ger_alpha <= 1.0)) fail("ger_alpha must lie in [0, 1]");
  if (!(per_c >= 0.0) || !(ger_c >= 0.0)) fail("priority offsets must be >= 0");
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) fail("rmsprop_decay must lie in [0, 1)");
  if (!(rmsprop_epsilon > 0.0)) fail("rmsprop_epsilon must be > 0");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0)) fail("epsilon_start must lie in [0, 1]");
  if (!(epsilon_end >= 0.0 && epsilon_end <= 1.0)) fail("epsilon_end must lie in [0, 1]");
  if (buffer_capacity == 0) fail("buffer_capacity must be >= 1");
  if (train_period == 0) fail("train_period must be >= 1");
  const std::size_t needed = uses_large_batch(sampler) ? multiplier * batch_size : batch_size;
  if (needed > buffer_capacity) fail("m * batch_size exceeds buffer_capacity");
}

double dqn_target(const Transition& t, const Network& target_net, double gamma) {
  if (t.done) return t.reward;
  const ForwardCache cache = forward(target_net, single_row(t.next_state));
  return scalar_target(t, row_vector(cache.output(), 0), gamma);
}

std::vector<double> c51_target(const Transition& t, const Network& target_net, double gamma,
                               const AtomSupport& support) {
  if (support.atoms < 2 || !(support.v_min < support.v_max)) {
    throw Error(ErrorKind::InvalidArgument, "support needs >= 2 increasing atoms");
  }
  if (target_net.output_dim() % support.atoms != 0) {
    throw Error(ErrorKind::ShapeMismatch, "network output is not a multiple of the atom count");
  }
  if (t.done) return project(t, {}, gamma, support);
  const ForwardCache cache = forward(target_net, single_row(t.next_state));
  return project(t, row_vector(cache.output(), 0), gamma, support);
}

std::vector<double> categorical_q_values(std::span<const double> probabilities, const AtomSupport& support) {
  const std::size_t actions = probabilities.size() / support.atoms;
  std::vector<double> q(actions, 0.0);
  for (std::size_t a = 0; a < actions; ++a) {
    for (std::size_t j = 0; j < support.atoms; ++j) q[a] += support.atom(j) * probabilities[a * support.atoms + j];
  }
  return q;
}

StepPlan plan_uniform(const ReplayBuffer& buffer, std::size_t batch_size, Rng& rng) {
  SampleBatch batch = sample_uniform(buffer, batch_size, rng);
  const double c = 1.0 / static_cast<double>(batch_size);
  return StepPlan{std::move(batch.indices), std::vector<double>(batch_size, c), std::move(batch.probabilities)};
}

StepPlan plan_prioritized(const ReplayBuffer& buffer, const PriorityStore& store, std::size_t batch_size,
                          bool max_weight_normalization, Rng& rng) {
  SampleBatch batch = sample_prioritized(buffer, store, batch_size, rng);
  const double norm = max_weight_normalization ? *std::max_element(batch.weights.begin(), batch.weights.end()) : 1.0;
  StepPlan plan{std::move(batch.indices), {}, std::move(batch.probabilities)};
  plan.coefficients.reserve(batch_size);
  for (double w : batch.weights) plan.coefficients.push_back(w / norm / static_cast<double>(batch_size));
  return plan;
}

double scale_factor(std::span<const double> selected, std::span<const double> large, Scaling scaling,
                    std::size_t batch_size, std::size_t multiplier) {
  if (large.size() != multiplier * batch_size) {
    throw Error(ErrorKind::ShapeMismatch, "large batch holds " + std::to_string(large.size()) + " scores, expected " +
                                              std::to_string(multiplier * batch_size));
  }
  switch (scaling) {
    case Scaling::mean:
      return std::accumulate(large.begin(), large.end(), 0.0) / static_cast<double>(large.size());
    case Scaling::lazy:
      return 1.0;
    case Scaling::max:
      if (selected.empty()) throw Error(ErrorKind::InvalidArgument, "empty selection");
      return *std::min_element(selected.begin(), selected.end());
  }
  return 1.0;
}

DownsamplePlan plan_downsample(std::span<const double> scores, std::span<const double> stage_weights,
                               std::size_t batch_size, std::size_t multiplier, Scaling scaling, Rng& rng) {
  if (batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be >= 1");
  if (!stage_weights.empty() && stage_weights.size() != scores.size()) {
    throw Error(ErrorKind::LengthMismatch, "one stage weight per large-batch entry");
  }
  double total = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0) throw Error(ErrorKind::NonFinite, "scores must be finite and >= 0");
    total += s;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::ZeroSurrogate, "every large-batch score is zero");

  std::vector<double> probs(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) probs[k] = scores[k] / total;
  const Distribution dist(probs);

  DownsamplePlan plan;
  plan.positions = sample_indices(dist, batch_size, rng);
  std::vector<double> selected;
  for (std::size_t pos : plan.positions) selected.push_back(scores[pos]);
  const double scale = scale_factor(selected, scores, scaling, batch_size, multiplier);
  for (std::size_t pos : plan.positions) {
    const double w = stage_weights.empty() ? 1.0 : stage_weights[pos];
    plan.coefficients.push_back(scale * w / (static_cast<double>(batch_size) * scores[pos]));
    plan.probabilities.push_back(probs[pos]);
  }
  return plan;
}

Eigen::VectorXd descent_direction(const Eigen::MatrixXd& per_sample_grads, std::span<const double> selected,
                                  std::span<const double> large, Scaling scaling, std::size_t batch_size,
                                  std::size_t multiplier) {
  if (selected.size() != batch_size || static_cast<std::size_t>(per_sample_grads.rows()) != batch_size) {
    throw Error(ErrorKind::ShapeMismatch, "expected one gradient row and one score per mini-batch entry");
  }
  for (double g : selected) {
    if (!(g > 0.0)) throw Error(ErrorKind::ZeroSurrogate, "selected surrogate values must be > 0");
  }
  const double scale = scale_factor(selected, large, scaling, batch_size, multiplier);
  Eigen::VectorXd direction = Eigen::VectorXd::Zero(per_sample_grads.cols());
  for (std::size_t i = 0; i < batch_size; ++i) direction += per_sample_grads.row(static_cast<Eigen::Index>(i)).transpose() / selected[i];
  return direction * (scale / static_cast<double>(batch_size));
}

Agent::Agent(AgentConfig config, std::size_t observation_dim, std::size_t num_actions, std::uint64_t seed)
    : config_(std::move(config)),
      observation_dim_(observation_dim),
      num_actions_(num_actions),
      support_{config_.v_min, config_.v_max, config_.atoms},
      loss_(config_.loss_spec()),
      buffer_(config_.buffer_capacity, observation_dim, num_actions),
      sampler_rng_(make_rng(seed, SeedStream::sampler)),
      exploration_rng_(make_rng(seed, SeedStream::exploration)) {
  config_.validate();
  std::vector<std::size_t> dims{observation_dim};
  dims.insert(dims.end(), config_.hidden.begin(), config_.hidden.end());
  dims.push_back(config_.distributional ? num_actions * config_.atoms : num_actions);
  Rng init = make_rng(seed, SeedStream::init);
  online_ = Network::glorot(dims, Activation::relu, config_.distributional ? Activation::softmax : Activation::identity,
                            init, config_.distributional ? config_.atoms : 0);
  target_ = online_;
  rms_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(online_.num_parameters()));

  if (config_.sampler == SamplerKind::per || config_.sampler == SamplerKind::per_laber) {
    buffer_.add_priority_head(config_.per_alpha, config_.per_c);
  } else if (config_.sampler == SamplerKind::ger || config_.sampler == SamplerKind::ger_laber) {
    buffer_.add_priority_head(config_.ger_alpha, config_.ger_c);
  }
}

void Agent::set_online(Network net) {
  if (net.input_dim() != online_.input_dim() || net.output_dim() != online_.output_dim() ||
      net.softmax_group() != online_.softmax_group()) {
    throw Error(ErrorKind::ShapeMismatch, "replacement network has a different interface");
  }
  online_ = std::move(net);
  rms_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(online_.num_parameters()));
}

std::vector<double> Agent::q_values(std::span<const double> observation) const {
  const ForwardCache cache = forward(online_, single_row(observation));
  std::vector<double> out = row_vector(cache.output(), 0);
  return config_.distributional ? categorical_q_values(out, support_) : out;
}

std::size_t Agent::greedy_action(std::span<const double> observation) const { return argmax(q_values(observation)); }

double Agent::epsilon(std::uint64_t env_step) const {
  if (config_.epsilon_decay_steps == 0) return config_.epsilon_end;
  const double frac = std::min(1.0, static_cast<double>(env_step) / static_cast<double>(config_.epsilon_decay_steps));
  return config_.epsilon_start + frac * (config_.epsilon_end - config_.epsilon_start);
}

std::size_t Agent::act(std::span<const double> observation, std::uint64_t env_step) {
  if (uniform01(exploration_rng_) < epsilon(env_step)) {
    return std::uniform_int_distribution<std::size_t>(0, num_actions_ - 1)(exploration_rng_);
  }
  return greedy_action(observation);
}

std::size_t Agent::min_buffer_size() const {
  return uses_large_batch(config_.sampler) ? config_.multiplier * config_.batch_size : config_.batch_size;
}

Eigen::MatrixXd Agent::states_for(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(observation_dim_));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Transition& t = buffer_.at(indices[k]);
    for (std::size_t j = 0; j < observation_dim_; ++j) x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = t.state[j];
  }
  return x;
}

std::vector<Target> Agent::targets_for(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd next(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(observation_dim_));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Transition& t = buffer_.at(indices[k]);
    for (std::size_t j = 0; j < observation_dim_; ++j) next(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = t.next_state[j];
  }
  const ForwardCache cache = forward(target_, next);
  std::vector<Target> targets;
  targets.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Transition& t = buffer_.at(indices[k]);
    const std::vector<double> row = row_vector(cache.output(), static_cast<Eigen::Index>(k));
    Target target;
    target.action = t.action;
    if (config_.distributional) {
      target.distribution = project(t, row, config_.gamma, support_);
    } else {
      target.value = scalar_target(t, row, config_.gamma);
    }
    targets.push_back(std::move(target));
  }
  return targets;
}

std::vector<double> Agent::refresh_values(const ForwardCache& cache, std::span<const Target> targets) const {
  if (config_.sampler == SamplerKind::ger || config_.sampler == SamplerKind::ger_laber) {
    return per_sample_gradient_norms(online_, cache, targets, loss_);
  }
  if (config_.distributional) return losses(online_, cache, targets, loss_);
  std::vector<double> delta = td_errors(cache, targets);
  for (double& d : delta) d = std::abs(d);
  return delta;
}

StepOutcome Agent::apply(const std::vector<std::size_t>& indices, const std::vector<double>& coefficients,
                         StepOutcome outcome) {
  const ForwardCache cache = forward(online_, states_for(indices));
  const std::vector<Target> targets = targets_for(indices);
  outcome.loss = mean(losses(online_, cache, targets, loss_));
  if (uses_priorities(config_.sampler) && !uses_large_batch(config_.sampler)) {
    store().update(indices, refresh_values(cache, targets));
  }
  const Eigen::VectorXd grad = weighted_gradient(online_, cache, targets, loss_, coefficients);
  descend(grad);
  outcome.updated = true;
  outcome.indices = indices;
  return outcome;
}

void Agent::descend(const Eigen::VectorXd& grad) {
  if (config_.optimizer == Optimizer::rmsprop) {
    rms_ = config_.rmsprop_decay * rms_ + (1.0 - config_.rmsprop_decay) * grad.cwiseAbs2();
    online_.add_scaled(-config_.learning_rate,
                       (grad.array() / (rms_.array().sqrt() + config_.rmsprop_epsilon)).matrix());
  } else {
    online_.add_scaled(-config_.learning_rate, grad);
  }
  ++gradient_steps_;
  if (gradient_steps_ % config_.target_update_period == 0) target_ = online_;
}

StepOutcome Agent::train_step() {
  switch (config_.sampler) {
    case SamplerKind::uniform: return train_step_uniform();
    case SamplerKind::per:
    case SamplerKind::ger: return train_step_prioritized();
    case SamplerKind::laber: return train_step_laber();
    case SamplerKind::per_laber:
    case SamplerKind::ger_laber: return train_step_combined();
  }
  return {};
}

StepOutcome Agent::train_step_uniform() {
  if (buffer_.size() < config_.batch_size) throw Error(ErrorKind::InsufficientData, "buffer smaller than batch");
  StepPlan plan = plan_uniform(buffer_, config_.batch_size, sampler_rng_);
  return apply(plan.indices, plan.coefficients, {});
}

StepOutcome Agent::train_step_prioritized() {
  if (buffer_.num_priority_heads() == 0) throw Error(ErrorKind::InvalidArgument, "sampler has no priority store");
  if (buffer_.size() < config_.batch_size) throw Error(ErrorKind::InsufficientData, "buffer smaller than batch");
  StepPlan plan = plan_prioritized(buffer_, store(), config_.batch_size, config_.max_weight_normalization, sampler_rng_);
  return apply(plan.indices, plan.coefficients, {});
}

StepOutcome Agent::train_step_laber() {
  SampleBatch large = sample_uniform_large_batch(buffer_, config_.multiplier, config_.batch_size, sampler_rng_);
  return laber_step(large, false);
}

StepOutcome Agent::train_step_combined() {
  if (buffer_.num_priority_heads() == 0) throw Error(ErrorKind::InvalidArgument, "sampler has no priority store");
  const std::size_t count = config_.multiplier * config_.batch_size;
  if (buffer_.size() < count) throw Error(ErrorKind::InsufficientData, "buffer smaller than the large batch");
  SampleBatch large = sample_prioritized(buffer_, store(), count, sampler_rng_);
  if (config_.max_weight_normalization) {
    const double norm = *std::max_element(large.weights.begin(), large.weights.end());
    for (double& w : large.weights) w /= norm;
  }
  return laber_step(large, true);
}

StepOutcome Agent::laber_step(const SampleBatch& large, bool stage_weighted) {
  const ForwardCache cache = forward(online_, states_for(large.indices));
  const std::vector<Target> targets = targets_for(large.indices);

  std::optional<std::vector<double>> exact;
  if (config_.priority_source == PrioritySource::exact_grad_norm || config_.record_tv) {
    exact = per_sample_gradient_norms(online_, cache, targets, loss_);
  }
  const std::vector<double> scores =
      config_.priority_source == PrioritySource::surrogate ? surrogate_norm(online_, cache, targets, loss_) : *exact;

  StepOutcome outcome;
  const double score_total = std::accumulate(scores.begin(), scores.end(), 0.0);
  if (config_.record_tv && score_total > 0.0) {
    const double exact_total = std::accumulate(exact->begin(), exact->end(), 0.0);
    if (exact_total > 0.0) {
      std::vector<double> p_hat(scores.size());
      for (std::size_t k = 0; k < scores.size(); ++k) p_hat[k] = scores[k] / score_total;
      const Distribution surrogate_dist(p_hat);
      const Distribution optimal = optimal_distribution(*exact);
      outcome.tv_surrogate = total_variation(surrogate_dist, optimal);
      outcome.tv_uniform = total_variation(Distribution::uniform(scores.size()), optimal);
      outcome.variance_term = variance_term(surrogate_dist, *exact);
    }
  }
  if (!(score_total > 0.0)) {
    // Zero scores mean zero output deltas, so every gradient in the batch vanishes.
    outcome.loss = mean(losses(online_, cache, targets, loss_));
    return outcome;
  }

  const std::span<const double> stage = stage_weighted ? std::span<const double>(large.weights) : std::span<const double>();
  const DownsamplePlan plan =
      plan_downsample(scores, stage, config_.batch_size, config_.multiplier, config_.scaling, sampler_rng_);

  std::vector<std::size_t> indices;
  std::vector<Target> selected_targets;
  for (std::size_t pos : plan.positions) {
    indices.push_back(large.indices[pos]);
    selected_targets.push_back(targets[pos]);
  }
  const ForwardCache selected = select_rows(cache, plan.positions);
  outcome.loss = mean(losses(online_, selected, selected_targets, loss_));
  if (uses_priorities(config_.sampler)) store().update(indices, refresh_values(selected, selected_targets));

  const Eigen::VectorXd grad = weighted_gradient(online_, selected, selected_targets, loss_, plan.coefficients);
  descend(grad);
  outcome.updated = true;
  outcome.indices = std::move(indices);
  return outcome;
}

void Agent::save(std::ostream& out) const {
  out.write(kAgentMagic, 8);
  io::write_doubles(out, to_std(online_.parameters()));
  io::write_doubles(out, to_std(target_.parameters()));
  io::write_doubles(out, to_std(rms_));
  io::write_pod<std::uint64_t>(out, gradient_steps_);
  io::write_string(out, rng_state(sampler_rng_));
  io::write_string(out, rng_state(exploration_rng_));
  dump_buffer(buffer_, out);
  if (!out) throw Error(ErrorKind::IoError, "failed to write agent state");
}

void Agent::load(std::istream& in) {
  io::expect_magic(in, magic(kAgentMagic));
  const auto online = io::read_doubles(in);
  const auto target = io::read_doubles(in);
  const auto rms = io::read_doubles(in);
  if (online.size() != online_.num_parameters() || target.size() != online.size() || rms.size() != online.size()) {
    throw Error(ErrorKind::IoError, "checkpoint does not match the network shape");
  }
  online_.set_parameters(to_eigen(online));
  target_.set_parameters(to_eigen(target));
  rms_ = to_eigen(rms);
  gradient_steps_ = io::read_pod<std::uint64_t>(in);
  set_rng_state(sampler_rng_, io::read_string(in));
  set_rng_state(exploration_rng_, io::read_string(in));
  ReplayBuffer buffer = load_buffer(in);
  if (buffer.capacity() != buffer_.capacity() || buffer.observation_dim() != buffer_.observation_dim() ||
      buffer.num_priority_heads() != buffer_.num_priority_heads()) {
    throw Error(ErrorKind::IoError, "checkpoint buffer does not match the configuration");
  }
  buffer_ = std::move(buffer);
}

std::size_t policy_agreement(const Agent& agent, const Env& env, const QTable& oracle) {
  std::size_t matches = 0;
  for (std::size_t s = 0; s < env.num_states(); ++s) {
    if (env.is_terminal(s)) continue;
    if (agent.greedy_action(env.encode(s)) == oracle.greedy_action(s)) ++matches;
  }
  return matches;
}

bool matches_policy(const Agent& agent, const Env& env, const QTable& oracle) {
  std::size_t non_terminal = 0;
  for (std::size_t s = 0; s < env.num_states(); ++s) non_terminal += env.is_terminal(s) ? 0 : 1;
  return policy_agreement(agent, env, oracle) == non_terminal;
}

Trainer::Trainer(std::unique_ptr<Env> env, AgentConfig config, std::uint64_t seed)
    : env_(std::move(env)),
      agent_(std::move(config), env_->observation_dim(), env_->num_actions(), seed),
      env_rng_(make_rng(seed, SeedStream::env)) {
  observation_ = env_->reset();
}

DiagRecord Trainer::step() {
  if (env_->finished()) {
    observation_ = env_->reset();
    episode_return_ = 0.0;
  }
  const std::size_t action = agent_.act(observation_, env_steps_);
  StepResult result = env_->step(action, env_rng_);
  // Truncation at the episode cap is not a terminal transition.
  agent_.buffer().push(Transition{observation_, action, result.reward, result.observation, result.terminated});
  episode_return_ += result.reward;
  ++env_steps_;

  DiagRecord record;
  record.step = env_steps_;
  record.sampler = agent_.config().sampler_tag();
  const AgentConfig& cfg = agent_.config();
  if (env_steps_ >= cfg.learning_starts && env_steps_ % cfg.train_period == 0 &&
      agent_.buffer().size() >= agent_.min_buffer_size()) {
    StepOutcome outcome = agent_.train_step();
    record.loss = outcome.loss;
    record.variance_term = outcome.variance_term;
    record.tv_surrogate = outcome.tv_surrogate;
    record.tv_uniform = outcome.tv_uniform;
  }
  if (result.done()) record.episode_return = episode_return_;
  observation_ = std::move(result.observation);
  return record;
}

std::vector<DiagRecord> Trainer::run(std::uint64_t steps) {
  std::vector<DiagRecord> records;
  records.reserve(steps);
  for (std::uint64_t k = 0; k < steps; ++k) records.push_back(step());
  return records;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  out.write(kTrainerMagic, 8);
  io::write_pod<std::uint64_t>(out, env_->state());
  io::write_pod<std::uint64_t>(out, env_->episode_steps());
  io::write_pod<std::uint8_t>(out, env_->finished() ? 1 : 0);
  io::write_pod<std::uint64_t>(out, env_steps_);
  io::write_pod<double>(out, episode_return_);
  io::write_doubles(out, observation_);
  io::write_string(out, rng_state(env_rng_));
  agent_.save(out);
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  io::expect_magic(in, magic(kTrainerMagic));
  const auto state = io::read_pod<std::uint64_t>(in);
  const auto steps = io::read_pod<std::uint64_t>(in);
  const bool finished = io::read_pod<std::uint8_t>(in) != 0;
  env_->restore(state, steps, finished);
  env_steps_ = io::read_pod<std::uint64_t>(in);
  episode_return_ = io::read_pod<double>(in);
  observation_ = io::read_doubles(in);
  set_rng_state(env_rng_, io::read_string(in));
  agent_.load(in);
}

}  // namespace laber
