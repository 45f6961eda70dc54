#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "laber/rng.hpp"
#include "laber/sampling.hpp"
#include "laber/sum_tree.hpp"

namespace laber {

struct Transition {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

// Per-index raw priorities with the (raw + c)^alpha transform applied in a
// sum-tree. Only the first `size()` indices are live; the rest hold zero mass.
class PriorityStore {
 public:
  PriorityStore(std::size_t capacity, double alpha, double c);

  double alpha() const noexcept { return alpha_; }
  double c() const noexcept { return c_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return raw_.size(); }

  double raw(std::size_t index) const;
  double transformed(std::size_t index) const { return tree_.get(index); }
  double total() const noexcept { return tree_.total(); }
  const SumTree& tree() const noexcept { return tree_; }
  double max_seen() const noexcept { return max_seen_; }

  // Probability of `index` under the normalized transformed priorities.
  double probability(std::size_t index) const;
  Distribution distribution() const;

  // Assigns the maximum priority seen so far to a freshly written slot.
  void on_insert(std::size_t index);

  // Rewrites exactly the listed entries; validated before anything changes.
  void update(std::span<const std::size_t> indices, std::span<const double> raw_values);

  // Restores a store from serialized raw priorities.
  void restore(std::vector<double> raw, std::size_t size, double max_seen);

 private:
  double alpha_;
  double c_;
  std::vector<double> raw_;
  SumTree tree_;
  std::size_t size_ = 0;
  double max_seen_ = 1.0;
};

// Indices, per-item sampling probabilities and importance weights 1/(N p_i).
struct SampleBatch {
  std::vector<std::size_t> indices;
  std::vector<double> probabilities;
  std::vector<double> weights;
};

// Ring buffer of transitions with any number of attached priority heads
// (one per consumer; two would serve a twin-critic learner).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t observation_dim, std::size_t num_actions);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t cursor() const noexcept { return cursor_; }
  std::size_t observation_dim() const noexcept { return observation_dim_; }
  std::size_t num_actions() const noexcept { return num_actions_; }

  std::size_t add_priority_head(double alpha, double c);
  std::size_t num_priority_heads() const noexcept { return heads_.size(); }
  PriorityStore& priorities(std::size_t head = 0);
  const PriorityStore& priorities(std::size_t head = 0) const;

  // Stores at the cursor (overwriting the oldest entry once full) and returns
  // the slot index. Throws ShapeMismatch on bad dimensions or action.
  std::size_t push(Transition transition);

  const Transition& at(std::size_t index) const;

  // Slot indices from oldest to newest.
  std::vector<std::size_t> chronological_indices() const;

 private:
  std::size_t capacity_;
  std::size_t observation_dim_;
  std::size_t num_actions_;
  std::vector<Transition> storage_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::vector<PriorityStore> heads_;

  friend void dump_buffer(const ReplayBuffer&, std::ostream&);
  friend ReplayBuffer load_buffer(std::istream&);
};

// B uniform draws with replacement.
SampleBatch sample_uniform(const ReplayBuffer& buffer, std::size_t batch_size, Rng& rng);

// B draws with replacement proportional to the store's transformed priorities.
SampleBatch sample_prioritized(const ReplayBuffer& buffer, const PriorityStore& store, std::size_t batch_size,
                               Rng& rng);

// m * B distinct indices drawn uniformly without replacement; probabilities 1/N.
SampleBatch sample_uniform_large_batch(const ReplayBuffer& buffer, std::size_t multiplier, std::size_t batch_size,
                                       Rng& rng);

void update_priorities(PriorityStore& store, std::span<const std::size_t> indices,
                       std::span<const double> raw_values);

// Flat little-endian binary: header (dims, capacity, size, cursor), slots in
// storage order, then every priority head.
void dump_buffer(const ReplayBuffer& buffer, std::ostream& out);
ReplayBuffer load_buffer(std::istream& in);

}  // namespace laber
