#pragma once

#include <cstddef>
#include <vector>

namespace laber {

// Binary tree of partial sums over non-negative leaf priorities.
//
// Leaves live at [capacity, 2 * capacity) of a 1-based heap layout; the
// capacity is the requested size rounded up to a power of two, and the padding
// leaves hold priority 0 so they are never sampled. Updates recompute each
// ancestor from its two children, so internal nodes are always exactly the sum
// of their children and no floating-point drift accumulates.
class SumTree {
 public:
  explicit SumTree(std::size_t min_capacity = 1);

  std::size_t capacity() const noexcept { return capacity_; }

  // O(log capacity). Throws OutOfRange / NegativePriority / NonFinite.
  void set(std::size_t index, double priority);
  double get(std::size_t index) const;
  double total() const noexcept { return nodes_[1]; }

  // Returns the index i with prefix(i) <= u < prefix(i + 1) in left-to-right
  // leaf order. Throws EmptyTree when the total is zero and OutOfRange for
  // negative or non-finite u. Values of u at or beyond the total (rounding in
  // the caller) resolve to the last positive leaf.
  std::size_t sample(double u) const;

  // Recomputes every internal node from the leaves.
  void rebuild();

  // Internal node value, 1-based heap numbering; exposed for invariant checks.
  double node(std::size_t heap_index) const { return nodes_.at(heap_index); }

 private:
  std::size_t capacity_;
  std::vector<double> nodes_;
};

}  // namespace laber
