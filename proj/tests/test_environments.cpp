#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "laber/environments.hpp"
#include "laber/error.hpp"

using namespace laber;
using laber::testing::error_kind;

namespace {

double max_abs_diff(const QTable& a, const QTable& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k) m = std::max(m, std::abs(a.values[k] - b.values[k]));
  return m;
}

}  // namespace

TEST_CASE("chain value iteration on three states") {
  const ChainMdp env(3, 0.0);
  const QTable q = value_iteration(env, 0.9, 1e-12);
  // From state 1 moving right ends the episode with reward 1.
  CHECK(q(1, 1) == doctest::Approx(1.0).epsilon(1e-10));
  // From state 0: one step penalty, then the value of state 1.
  CHECK(q(0, 1) == doctest::Approx(-0.01 + 0.9 * 1.0).epsilon(1e-10));
  // Moving left at 0 stays at 0.
  CHECK(q(0, 0) == doctest::Approx(-0.01 + 0.9 * q(0, 1)).epsilon(1e-10));
  CHECK(q(2, 0) == 0.0);
}

TEST_CASE("five-state chain fixed point is a geometric series") {
  const ChainMdp env(5, 0.0);
  const double g = 0.9;
  const QTable q = value_iteration(env, g, 1e-13);
  // V(s) for s < 4 under always-right: sum_{k < 3 - s} -0.01 g^k + g^{3 - s}
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t n = 3 - s;
    double v = std::pow(g, static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k) v += -0.01 * std::pow(g, static_cast<double>(k));
    CHECK(q(s, 1) == doctest::Approx(v).epsilon(1e-10));
  }
}

TEST_CASE("terminal step reports done and no further reward") {
  ChainMdp env(3, 0.0);
  Rng rng(1);
  env.reset();
  CHECK_FALSE(env.step(1, rng).done());
  const StepResult last = env.step(1, rng);
  CHECK(last.terminated);
  CHECK(last.reward == 1.0);
  const StepResult after = env.step(1, rng);
  CHECK(after.done());
  CHECK(after.reward == 0.0);
}

TEST_CASE("deterministic chain gives identical trajectories") {
  for (double slip : {0.0, 0.3}) {
    ChainMdp a(6, slip);
    ChainMdp b(6, slip);
    Rng ra(7);
    Rng rb(7);
    a.reset();
    b.reset();
    for (int k = 0; k < 150; ++k) {
      const std::size_t action = k % 3 == 0 ? 0 : 1;
      const StepResult x = a.step(action, ra);
      const StepResult y = b.step(action, rb);
      CHECK(x.observation == y.observation);
      CHECK(x.reward == y.reward);
      if (x.done()) {
        a.reset();
        b.reset();
      }
    }
  }
}

TEST_CASE("slip flips the action with the given probability") {
  const ChainMdp env(5, 0.25);
  const auto out = env.outcomes(2, 1);
  REQUIRE(out.size() == 2);
  CHECK(out[0].next_state == 3);
  CHECK(out[0].probability == 0.75);
  CHECK(out[1].next_state == 1);
  CHECK(out[1].probability == 0.25);
}

TEST_CASE("environment constructors validate") {
  CHECK(error_kind([] { ChainMdp(2, 0.0); }) == ErrorKind::InvalidArgument);
  CHECK(error_kind([] { ChainMdp(4, 0.6); }) == ErrorKind::InvalidArgument);
  CHECK(error_kind([] { Gridworld(3, 3, {2, 2}, {{2, 2}}); }) == ErrorKind::GoalOnTrap);
  CHECK(error_kind([] { Gridworld(3, 3, {3, 0}, {}); }) == ErrorKind::OutOfRange);
}

TEST_CASE("one-by-two grid steps straight to the goal") {
  const Gridworld env(2, 1, {1, 0}, {});
  const QTable q = value_iteration(env, 0.9, 1e-12);
  CHECK(q.greedy_action(0) == 1);
  CHECK(q(0, 1) == doctest::Approx(10.0));
}

TEST_CASE("optimal path avoids a trap next to the start") {
  // 3x2 grid, start (0,0), trap (1,0), goal (2,0): the agent must go down and around.
  const Gridworld env(3, 2, {2, 0}, {{1, 0}});
  const QTable q = value_iteration(env, 0.95, 1e-12);
  CHECK(q.greedy_action(env.index({0, 0})) == 2);  // down
  CHECK(q.greedy_action(env.index({0, 1})) == 1);  // right
  CHECK(q.greedy_action(env.index({1, 1})) == 1);  // right
  CHECK(q.greedy_action(env.index({2, 1})) == 0);  // up into the goal
  CHECK(q(env.index({0, 0}), 1) == doctest::Approx(-10.0));
}

TEST_CASE("gridworld rewards and episode cap") {
  Gridworld env(4, 4, {3, 3}, {{1, 1}});
  Rng rng(3);
  env.reset();
  std::size_t steps = 0;
  StepResult r;
  do {
    r = env.step(0, rng);  // bump into the top wall forever
    ++steps;
    CHECK(r.reward == -1.0);
  } while (!r.done());
  CHECK(steps == Env::kEpisodeCap);
  CHECK(r.truncated);
  CHECK_FALSE(r.terminated);
}

TEST_CASE("rewards stay bounded under random play") {
  Rng rng(4);
  std::uniform_int_distribution<std::size_t> pick(0, 3);
  Gridworld grid(5, 5, {4, 4}, {{1, 1}, {3, 2}});
  ChainMdp chain(10, 0.2);
  for (Env* env : std::initializer_list<Env*>{&grid, &chain}) {
    env->reset();
    for (int k = 0; k < 100'000; ++k) {
      const StepResult r = env->step(pick(rng) % env->num_actions(), rng);
      CHECK(std::abs(r.reward) <= 10.0);
      CHECK(env->episode_steps() <= Env::kEpisodeCap);
      if (r.done()) env->reset();
    }
  }
}

TEST_CASE("value iteration is a contraction and has a small Bellman residual") {
  const ChainMdp env(8, 0.0);
  const double g = 0.8;
  const QTable star = value_iteration(env, g, 1e-13);
  QTable q{env.num_states(), env.num_actions(), std::vector<double>(16, 5.0)};
  for (int k = 0; k < 30; ++k) {
    const QTable next = bellman_backup(env, q, g);
    CHECK(max_abs_diff(next, star) <= g * max_abs_diff(q, star) + 1e-12);
    q = next;
  }
  const double tol = 1e-8;
  const Gridworld grid(6, 6, {5, 5}, {{2, 2}, {3, 4}});
  const QTable gq = value_iteration(grid, 0.95, tol);
  CHECK(max_abs_diff(bellman_backup(grid, gq, 0.95), gq) < tol);
}

TEST_CASE("myopic value iteration returns immediate rewards") {
  const ChainMdp env(4, 0.2);
  const QTable q = value_iteration(env, 0.0, 1e-12);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      double r = 0.0;
      for (const Outcome& o : env.outcomes(s, a)) r += o.probability * o.reward;
      CHECK(q(s, a) == doctest::Approx(r));
    }
  }
}

TEST_CASE("value iteration refuses large state spaces") {
  const Gridworld big(100, 30, {99, 29}, {});
  CHECK(error_kind([&] { value_iteration(big, 0.9, 1e-6); }) == ErrorKind::NotEnumerable);
}

TEST_CASE("Q table CSV export") {
  const Gridworld env(3, 3, {2, 2}, {{1, 1}});
  const QTable q = value_iteration(env, 0.9, 1e-12);
  const auto path = std::filesystem::temp_directory_path() / "laber_qtable.csv";
  export_q_table_csv(q, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "state,q0,q1,q2,q3");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    CHECK(std::stoul(cell) == rows);
    for (std::size_t a = 0; a < 4; ++a) {
      std::getline(cells, cell, ',');
      CHECK(std::stod(cell) == doctest::Approx(q(rows, a)).epsilon(1e-15));
    }
    ++rows;
  }
  CHECK(rows == 9);
  std::filesystem::remove(path);
}
