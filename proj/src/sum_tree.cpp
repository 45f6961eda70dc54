#include "laber/sum_tree.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "laber/error.hpp"

namespace laber {

SumTree::SumTree(std::size_t min_capacity)
    : capacity_(std::bit_ceil(min_capacity == 0 ? std::size_t{1} : min_capacity)),
      nodes_(2 * capacity_, 0.0) {}

void SumTree::set(std::size_t index, double priority) {
  if (index >= capacity_) {
    throw Error(ErrorKind::OutOfRange,
                "leaf " + std::to_string(index) + " >= capacity " + std::to_string(capacity_));
  }
  if (!std::isfinite(priority)) throw Error(ErrorKind::NonFinite, "priority is not finite");
  if (priority < 0.0) throw Error(ErrorKind::NegativePriority, "priority must be >= 0");

  std::size_t node = capacity_ + index;
  nodes_[node] = priority;
  for (node >>= 1; node >= 1; node >>= 1) nodes_[node] = nodes_[2 * node] + nodes_[2 * node + 1];
}

double SumTree::get(std::size_t index) const {
  if (index >= capacity_) throw Error(ErrorKind::OutOfRange, "leaf index out of range");
  return nodes_[capacity_ + index];
}

std::size_t SumTree::sample(double u) const {
  if (!(total() > 0.0)) throw Error(ErrorKind::EmptyTree, "cannot sample a tree with zero total");
  if (!std::isfinite(u) || u < 0.0) throw Error(ErrorKind::OutOfRange, "u must be finite and >= 0");

  std::size_t node = 1;
  while (node < capacity_) {
    const double left = nodes_[2 * node];
    const double right = nodes_[2 * node + 1];
    if (u < left || right <= 0.0) {
      node = 2 * node;
    } else {
      u -= left;
      node = 2 * node + 1;
    }
  }
  return node - capacity_;
}

void SumTree::rebuild() {
  for (std::size_t node = capacity_ - 1; node >= 1; --node) {
    nodes_[node] = nodes_[2 * node] + nodes_[2 * node + 1];
  }
}

}  // namespace laber
