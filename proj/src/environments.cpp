#include "laber/environments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "laber/error.hpp"

namespace laber {

std::vector<double> Env::encode(std::size_t state) const {
  if (state >= num_states()) throw Error(ErrorKind::OutOfRange, "state out of range");
  std::vector<double> obs(num_states(), 0.0);
  obs[state] = 1.0;
  return obs;
}

std::vector<double> Env::reset() {
  state_ = start_state();
  steps_ = 0;
  finished_ = false;
  return encode(state_);
}

StepResult Env::step(std::size_t action, Rng& rng) {
  if (action >= num_actions()) throw Error(ErrorKind::OutOfRange, "action out of range");
  if (finished_) return StepResult{encode(state_), 0.0, is_terminal(state_), !is_terminal(state_)};

  const std::vector<Outcome> options = outcomes(state_, action);
  std::size_t pick = 0;
  if (options.size() > 1) {
    const double u = uniform01(rng);
    double acc = 0.0;
    pick = options.size() - 1;
    for (std::size_t k = 0; k < options.size(); ++k) {
      acc += options[k].probability;
      if (u < acc) {
        pick = k;
        break;
      }
    }
  }
  const Outcome& o = options[pick];
  state_ = o.next_state;
  ++steps_;
  StepResult result{encode(state_), o.reward, o.terminal, !o.terminal && steps_ >= kEpisodeCap};
  finished_ = result.done();
  return result;
}

void Env::restore(std::size_t state, std::size_t steps, bool finished) {
  if (state >= num_states()) throw Error(ErrorKind::OutOfRange, "state out of range");
  state_ = state;
  steps_ = steps;
  finished_ = finished;
}

ChainMdp::ChainMdp(std::size_t n_states, double slip_prob) : n_(n_states), slip_(slip_prob) {
  if (n_states < 3) throw Error(ErrorKind::InvalidArgument, "chain needs at least 3 states");
  if (!(slip_prob >= 0.0 && slip_prob <= 0.5)) throw Error(ErrorKind::InvalidArgument, "slip must lie in [0, 0.5]");
}

std::vector<Outcome> ChainMdp::outcomes(std::size_t state, std::size_t action) const {
  if (state >= n_ || action >= 2) throw Error(ErrorKind::OutOfRange, "state or action out of range");
  auto move = [&](std::size_t a) {
    const std::size_t next = a == 1 ? state + 1 : (state == 0 ? 0 : state - 1);
    const bool terminal = next + 1 == n_;
    return Outcome{1.0, next, terminal ? kGoalReward : kStepPenalty, terminal};
  };
  Outcome intended = move(action);
  if (slip_ == 0.0) return {intended};
  Outcome slipped = move(1 - action);
  intended.probability = 1.0 - slip_;
  slipped.probability = slip_;
  return {intended, slipped};
}

Gridworld::Gridworld(std::size_t width, std::size_t height, Cell goal, std::vector<Cell> traps, Cell start)
    : width_(width), height_(height), goal_(goal), traps_(std::move(traps)), start_(start) {
  if (width == 0 || height == 0) throw Error(ErrorKind::InvalidArgument, "grid must be non-empty");
  auto inside = [&](Cell c) { return c.x < width_ && c.y < height_; };
  if (!inside(goal_)) throw Error(ErrorKind::OutOfRange, "goal lies outside the grid");
  if (!inside(start_)) throw Error(ErrorKind::OutOfRange, "start lies outside the grid");
  trap_mask_.assign(num_states(), false);
  for (Cell t : traps_) {
    if (!inside(t)) throw Error(ErrorKind::OutOfRange, "trap lies outside the grid");
    if (t == goal_) throw Error(ErrorKind::GoalOnTrap, "goal coincides with a trap");
    if (t == start_) throw Error(ErrorKind::InvalidArgument, "start coincides with a trap");
    trap_mask_[index(t)] = true;
  }
  if (start_ == goal_) throw Error(ErrorKind::InvalidArgument, "start coincides with the goal");
}

bool Gridworld::is_terminal(std::size_t state) const { return state == index(goal_) || trap_mask_.at(state); }

std::vector<Outcome> Gridworld::outcomes(std::size_t state, std::size_t action) const {
  if (state >= num_states() || action >= 4) throw Error(ErrorKind::OutOfRange, "state or action out of range");
  Cell c{state % width_, state / width_};
  switch (action) {
    case 0: if (c.y > 0) --c.y; break;
    case 1: if (c.x + 1 < width_) ++c.x; break;
    case 2: if (c.y + 1 < height_) ++c.y; break;
    case 3: if (c.x > 0) --c.x; break;
  }
  const std::size_t next = index(c);
  if (next == index(goal_)) return {Outcome{1.0, next, kGoalReward, true}};
  if (trap_mask_[next]) return {Outcome{1.0, next, kTrapReward, true}};
  return {Outcome{1.0, next, kStepReward, false}};
}

std::unique_ptr<Env> chain_mdp(std::size_t n_states, double slip_prob) {
  return std::make_unique<ChainMdp>(n_states, slip_prob);
}

std::unique_ptr<Env> gridworld(std::size_t width, std::size_t height, Cell goal, std::vector<Cell> traps, Cell start) {
  return std::make_unique<Gridworld>(width, height, goal, std::move(traps), start);
}

std::size_t QTable::greedy_action(std::size_t s) const {
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(s * num_actions);
  return static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(num_actions)) - first);
}

QTable bellman_backup(const Env& env, const QTable& q, double gamma) {
  QTable next{q.num_states, q.num_actions, std::vector<double>(q.values.size(), 0.0)};
  for (std::size_t s = 0; s < q.num_states; ++s) {
    if (env.is_terminal(s)) continue;
    for (std::size_t a = 0; a < q.num_actions; ++a) {
      double acc = 0.0;
      for (const Outcome& o : env.outcomes(s, a)) {
        double future = 0.0;
        if (!o.terminal) future = q(o.next_state, q.greedy_action(o.next_state));
        acc += o.probability * (o.reward + gamma * future);
      }
      next(s, a) = acc;
    }
  }
  return next;
}

QTable value_iteration(const Env& env, double gamma, double tol, std::size_t max_iterations) {
  if (env.num_states() * env.num_actions() > kMaxEnumerablePairs) {
    throw Error(ErrorKind::NotEnumerable, std::to_string(env.num_states() * env.num_actions()) +
                                              " state-action pairs exceed the enumeration limit");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorKind::InvalidArgument, "gamma must lie in [0, 1)");
  if (!(tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "tolerance must be positive");

  QTable q{env.num_states(), env.num_actions(), std::vector<double>(env.num_states() * env.num_actions(), 0.0)};
  for (std::size_t it = 0; it < max_iterations; ++it) {
    QTable next = bellman_backup(env, q, gamma);
    double gap = 0.0;
    for (std::size_t k = 0; k < q.values.size(); ++k) gap = std::max(gap, std::abs(next.values[k] - q.values[k]));
    q = std::move(next);
    if (gap < tol) return q;
  }
  throw Error(ErrorKind::InvalidArgument, "value iteration did not converge");
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_policy(const Env& env, const QTable& q) {
  std::vector<std::pair<std::size_t, std::size_t>> policy;
  for (std::size_t s = 0; s < q.num_states; ++s) {
    if (!env.is_terminal(s)) policy.emplace_back(s, q.greedy_action(s));
  }
  return policy;
}

void export_q_table_csv(const QTable& q, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  out.precision(17);
  out << "state";
  for (std::size_t a = 0; a < q.num_actions; ++a) out << ",q" << a;
  out << '\n';
  for (std::size_t s = 0; s < q.num_states; ++s) {
    out << s;
    for (std::size_t a = 0; a < q.num_actions; ++a) out << ',' << q(s, a);
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

}  // namespace laber
