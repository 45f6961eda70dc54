#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "laber/rng.hpp"

namespace laber {

// One possible result of taking an action in an enumerable MDP.
struct Outcome {
  double probability = 1.0;
  std::size_t next_state = 0;
  double reward = 0.0;
  bool terminal = false;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminated = false;  // reached a terminal state
  bool truncated = false;   // hit the episode cap

  bool done() const { return terminated || truncated; }
};

// Tabular MDP with one-hot observations and an explicit transition model.
class Env {
 public:
  static constexpr std::size_t kEpisodeCap = 200;

  virtual ~Env() = default;

  virtual std::size_t num_states() const = 0;
  virtual std::size_t num_actions() const = 0;
  virtual std::size_t start_state() const = 0;
  virtual bool is_terminal(std::size_t state) const = 0;
  virtual std::vector<Outcome> outcomes(std::size_t state, std::size_t action) const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  std::size_t observation_dim() const { return num_states(); }
  std::vector<double> encode(std::size_t state) const;

  std::vector<double> reset();
  // Samples an outcome; the generator is consumed only for stochastic
  // transitions. Stepping a finished episode yields reward 0 and done.
  StepResult step(std::size_t action, Rng& rng);

  std::size_t state() const noexcept { return state_; }
  std::size_t episode_steps() const noexcept { return steps_; }
  bool finished() const noexcept { return finished_; }
  void restore(std::size_t state, std::size_t steps, bool finished);

 private:
  std::size_t state_ = 0;
  std::size_t steps_ = 0;
  bool finished_ = true;
};

// Linear chain; action 0 moves left, 1 moves right; with probability `slip`
// the other move happens. Entering the right end pays 1 and terminates, any
// other step costs 0.01. The episode starts at the left end.
class ChainMdp final : public Env {
 public:
  static constexpr double kGoalReward = 1.0;
  static constexpr double kStepPenalty = -0.01;

  ChainMdp(std::size_t n_states, double slip_prob);

  std::size_t num_states() const override { return n_; }
  std::size_t num_actions() const override { return 2; }
  std::size_t start_state() const override { return 0; }
  bool is_terminal(std::size_t state) const override { return state + 1 == n_; }
  std::vector<Outcome> outcomes(std::size_t state, std::size_t action) const override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<ChainMdp>(*this); }

 private:
  std::size_t n_;
  double slip_;
};

struct Cell {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const Cell&) const = default;
};

// Four-action gridworld (up, right, down, left). Each step costs 1, entering
// the goal pays +10 and entering a trap -10; both terminate. Moving into a wall
// leaves the agent in place.
class Gridworld final : public Env {
 public:
  static constexpr double kStepReward = -1.0;
  static constexpr double kGoalReward = 10.0;
  static constexpr double kTrapReward = -10.0;

  Gridworld(std::size_t width, std::size_t height, Cell goal, std::vector<Cell> traps, Cell start = {});

  std::size_t num_states() const override { return width_ * height_; }
  std::size_t num_actions() const override { return 4; }
  std::size_t start_state() const override { return index(start_); }
  bool is_terminal(std::size_t state) const override;
  std::vector<Outcome> outcomes(std::size_t state, std::size_t action) const override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<Gridworld>(*this); }

  std::size_t index(Cell c) const { return c.y * width_ + c.x; }

 private:
  std::size_t width_;
  std::size_t height_;
  Cell goal_;
  std::vector<Cell> traps_;
  Cell start_;
  std::vector<bool> trap_mask_;
};

std::unique_ptr<Env> chain_mdp(std::size_t n_states, double slip_prob);
std::unique_ptr<Env> gridworld(std::size_t width, std::size_t height, Cell goal, std::vector<Cell> traps,
                               Cell start = {});

// Q table indexed [state * num_actions + action]; terminal states hold zeros.
struct QTable {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> values;

  double operator()(std::size_t s, std::size_t a) const { return values[s * num_actions + a]; }
  double& operator()(std::size_t s, std::size_t a) { return values[s * num_actions + a]; }
  std::size_t greedy_action(std::size_t s) const;
};

inline constexpr std::size_t kMaxEnumerablePairs = 10'000;

// Iterates the optimality operator until ||Q_{k+1} - Q_k||_inf < tol.
// Throws NotEnumerable past kMaxEnumerablePairs state-action pairs.
QTable value_iteration(const Env& env, double gamma, double tol, std::size_t max_iterations = 1'000'000);

// One application of the optimality operator.
QTable bellman_backup(const Env& env, const QTable& q, double gamma);

// Greedy actions for every non-terminal state, in state order.
std::vector<std::pair<std::size_t, std::size_t>> greedy_policy(const Env& env, const QTable& q);

void export_q_table_csv(const QTable& q, const std::filesystem::path& path);

}  // namespace laber
