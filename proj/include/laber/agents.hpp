#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "laber/diagnostics.hpp"
#include "laber/environments.hpp"
#include "laber/network.hpp"
#include "laber/replay_buffer.hpp"
#include "laber/rng.hpp"

namespace laber {

enum class SamplerKind { uniform, per, ger, laber, per_laber, ger_laber };
enum class Scaling { mean, lazy, max };
enum class PrioritySource { surrogate, exact_grad_norm };
enum class Optimizer { sgd, rmsprop };

// Parses uniform | per | ger | laber-mean | laber-lazy | laber-max | per-laber | ger-laber.
// The scaling is only set by the laber-* tags.
struct SamplerTag {
  SamplerKind kind = SamplerKind::uniform;
  std::optional<Scaling> scaling;
};
SamplerTag parse_sampler(std::string_view tag);
std::string sampler_name(SamplerKind kind, Scaling scaling);
std::string to_string(Scaling scaling);
Scaling parse_scaling(std::string_view name);

bool uses_priorities(SamplerKind kind);
bool uses_large_batch(SamplerKind kind);

struct AgentConfig {
  double gamma = 0.99;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t multiplier = 4;
  std::size_t target_update_period = 100;
  SamplerKind sampler = SamplerKind::uniform;
  Scaling scaling = Scaling::mean;
  PrioritySource priority_source = PrioritySource::surrogate;

  LossKind loss = LossKind::huber;  // for the scalar head
  bool distributional = false;      // categorical head with cross-entropy
  std::size_t atoms = 11;
  double v_min = -10.0;
  double v_max = 10.0;
  std::vector<std::size_t> hidden = {32};

  double per_alpha = 0.6;
  double per_c = 1e-10;
  double ger_alpha = 1.0;
  double ger_c = 0.0;
  bool max_weight_normalization = true;

  Optimizer optimizer = Optimizer::sgd;
  double rmsprop_decay = 0.99;
  double rmsprop_epsilon = 1e-8;

  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  std::size_t epsilon_decay_steps = 10'000;

  std::size_t buffer_capacity = 10'000;
  std::size_t learning_starts = 1'000;
  std::size_t train_period = 1;
  bool record_tv = false;

  std::string sampler_tag() const { return sampler_name(sampler, scaling); }
  LossSpec loss_spec() const;
  void validate() const;
};

// Evenly spaced atoms z_j = v_min + j * (v_max - v_min) / (atoms - 1).
struct AtomSupport {
  double v_min = -10.0;
  double v_max = 10.0;
  std::size_t atoms = 11;

  double delta() const { return (v_max - v_min) / static_cast<double>(atoms - 1); }
  double atom(std::size_t j) const { return v_min + static_cast<double>(j) * delta(); }
};

// r if done, else r + gamma * max_a' Q_target(s', a').
double dqn_target(const Transition& t, const Network& target_net, double gamma);

// Projects r + gamma * z onto the support under the target's greedy next
// action. Values beyond the support land on the edge atoms.
std::vector<double> c51_target(const Transition& t, const Network& target_net, double gamma,
                               const AtomSupport& support);

// Expected action values of a categorical head, one per action.
std::vector<double> categorical_q_values(std::span<const double> probabilities, const AtomSupport& support);

// A mini-batch together with the per-sample coefficients c_k of the update
// direction sum_k c_k grad loss_{i_k}.
struct StepPlan {
  std::vector<std::size_t> indices;
  std::vector<double> coefficients;
  std::vector<double> probabilities;
};

StepPlan plan_uniform(const ReplayBuffer& buffer, std::size_t batch_size, Rng& rng);

// Coefficients w_i / B with w_i = 1/(N p_i), divided by the largest weight of
// the batch when `max_weight_normalization` is set.
StepPlan plan_prioritized(const ReplayBuffer& buffer, const PriorityStore& store, std::size_t batch_size,
                          bool max_weight_normalization, Rng& rng);

// Positions into the large batch drawn with replacement proportional to
// `scores`. Coefficients are scale * stage_weight / (B * score); an empty
// `stage_weights` means all ones. Throws ZeroSurrogate if every score is zero.
struct DownsamplePlan {
  std::vector<std::size_t> positions;
  std::vector<double> coefficients;
  std::vector<double> probabilities;  // score / sum(scores)
};

DownsamplePlan plan_downsample(std::span<const double> scores, std::span<const double> stage_weights,
                               std::size_t batch_size, std::size_t multiplier, Scaling scaling, Rng& rng);

// mean: sum(large) / (m B); lazy: 1; max: min(selected).
double scale_factor(std::span<const double> selected, std::span<const double> large, Scaling scaling,
                    std::size_t batch_size, std::size_t multiplier);

// scale * (1/B) sum_i grad_i / G_i with rows of `per_sample_grads` as grad_i.
Eigen::VectorXd descent_direction(const Eigen::MatrixXd& per_sample_grads, std::span<const double> selected,
                                  std::span<const double> large, Scaling scaling, std::size_t batch_size,
                                  std::size_t multiplier);

struct StepOutcome {
  bool updated = false;
  std::optional<double> loss;  // mean pre-update loss over the mini-batch
  std::vector<std::size_t> indices;
  std::optional<double> variance_term;
  std::optional<double> tv_surrogate;
  std::optional<double> tv_uniform;
};

class Agent {
 public:
  Agent(AgentConfig config, std::size_t observation_dim, std::size_t num_actions, std::uint64_t seed);

  const AgentConfig& config() const noexcept { return config_; }
  std::size_t num_actions() const noexcept { return num_actions_; }
  const Network& online() const noexcept { return online_; }
  const Network& target() const noexcept { return target_; }
  void set_online(Network net);
  void sync_target() { target_ = online_; }

  ReplayBuffer& buffer() noexcept { return buffer_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  PriorityStore& store() { return buffer_.priorities(0); }

  std::vector<double> q_values(std::span<const double> observation) const;
  std::size_t greedy_action(std::span<const double> observation) const;
  double epsilon(std::uint64_t env_step) const;
  std::size_t act(std::span<const double> observation, std::uint64_t env_step);

  // Samples required before train_step can run.
  std::size_t min_buffer_size() const;

  // Dispatches on the configured sampler.
  StepOutcome train_step();
  StepOutcome train_step_uniform();
  StepOutcome train_step_prioritized();
  StepOutcome train_step_laber();
  StepOutcome train_step_combined();

  std::uint64_t gradient_steps() const noexcept { return gradient_steps_; }

  // Targets for buffer entries under the current target network.
  std::vector<Target> targets_for(std::span<const std::size_t> indices) const;
  Eigen::MatrixXd states_for(std::span<const std::size_t> indices) const;

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  StepOutcome apply(const std::vector<std::size_t>& indices, const std::vector<double>& coefficients,
                    StepOutcome outcome);
  std::vector<double> refresh_values(const ForwardCache& cache, std::span<const Target> targets) const;
  StepOutcome laber_step(const SampleBatch& large, bool stage_weighted);
  // Optimizer step along -grad, then the target refresh schedule.
  void descend(const Eigen::VectorXd& grad);

  AgentConfig config_;
  std::size_t observation_dim_;
  std::size_t num_actions_;
  AtomSupport support_;
  LossSpec loss_;
  Network online_;
  Network target_;
  ReplayBuffer buffer_;
  Eigen::VectorXd rms_;
  Rng sampler_rng_;
  Rng exploration_rng_;
  std::uint64_t gradient_steps_ = 0;
};

// Number of non-terminal states whose greedy action matches the oracle table.
std::size_t policy_agreement(const Agent& agent, const Env& env, const QTable& oracle);
bool matches_policy(const Agent& agent, const Env& env, const QTable& oracle);

// Environment interaction loop: one DiagRecord per environment step, with a
// gradient step every `train_period` steps once `learning_starts` is reached.
class Trainer {
 public:
  Trainer(std::unique_ptr<Env> env, AgentConfig config, std::uint64_t seed);

  DiagRecord step();
  std::vector<DiagRecord> run(std::uint64_t steps);

  Agent& agent() noexcept { return agent_; }
  const Agent& agent() const noexcept { return agent_; }
  const Env& env() const noexcept { return *env_; }
  std::uint64_t env_steps() const noexcept { return env_steps_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  std::unique_ptr<Env> env_;
  Agent agent_;
  Rng env_rng_;
  std::vector<double> observation_;
  double episode_return_ = 0.0;
  std::uint64_t env_steps_ = 0;
};

}  // namespace laber
