#include "laber/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "laber/binary_io.hpp"
#include "laber/error.hpp"

namespace laber {

namespace {

constexpr char kBufferMagic[] = "LBRB0001";

void validate_raw(double v) {
  if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "priority is not finite");
  if (v < 0.0) throw Error(ErrorKind::NegativePriority, "priority must be >= 0");
}

}  // namespace

PriorityStore::PriorityStore(std::size_t capacity, double alpha, double c)
    : alpha_(alpha), c_(c), raw_(capacity, 0.0), tree_(capacity) {
  if (capacity == 0) throw Error(ErrorKind::InvalidArgument, "priority store capacity must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in [0, 1]");
  if (!(c >= 0.0) || !std::isfinite(c)) throw Error(ErrorKind::InvalidArgument, "c must be >= 0");
}

double PriorityStore::raw(std::size_t index) const {
  if (index >= raw_.size()) throw Error(ErrorKind::OutOfRange, "priority index out of range");
  return raw_[index];
}

double PriorityStore::probability(std::size_t index) const {
  if (index >= size_) throw Error(ErrorKind::OutOfRange, "priority index out of range");
  if (!(total() > 0.0)) throw Error(ErrorKind::AllZero, "all transformed priorities are zero");
  return tree_.get(index) / total();
}

Distribution PriorityStore::distribution() const {
  if (size_ == 0) throw Error(ErrorKind::InsufficientData, "priority store is empty");
  return normalize_priorities(PriorityVector{std::vector<double>(raw_.begin(), raw_.begin() + size_), alpha_, c_});
}

void PriorityStore::on_insert(std::size_t index) {
  if (index >= raw_.size()) throw Error(ErrorKind::OutOfRange, "priority index out of range");
  raw_[index] = max_seen_;
  tree_.set(index, std::pow(max_seen_ + c_, alpha_));
  size_ = std::max(size_, index + 1);
}

void PriorityStore::update(std::span<const std::size_t> indices, std::span<const double> raw_values) {
  if (indices.size() != raw_values.size()) throw Error(ErrorKind::LengthMismatch, "one value per index");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size_) {
      throw Error(ErrorKind::OutOfRange, "index " + std::to_string(indices[k]) + " is not a live entry");
    }
    validate_raw(raw_values[k]);
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    raw_[indices[k]] = raw_values[k];
    tree_.set(indices[k], std::pow(raw_values[k] + c_, alpha_));
    max_seen_ = std::max(max_seen_, raw_values[k]);
  }
}

void PriorityStore::restore(std::vector<double> raw, std::size_t size, double max_seen) {
  if (raw.size() != raw_.size() || size > raw.size()) throw Error(ErrorKind::ShapeMismatch, "priority dump mismatch");
  raw_ = std::move(raw);
  size_ = size;
  max_seen_ = max_seen;
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    validate_raw(raw_[i]);
    tree_.set(i, i < size_ ? std::pow(raw_[i] + c_, alpha_) : 0.0);
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t observation_dim, std::size_t num_actions)
    : capacity_(capacity), observation_dim_(observation_dim), num_actions_(num_actions) {
  if (capacity == 0 || observation_dim == 0 || num_actions == 0) {
    throw Error(ErrorKind::InvalidArgument, "capacity, observation size and action count must be >= 1");
  }
  storage_.reserve(capacity);
}

std::size_t ReplayBuffer::add_priority_head(double alpha, double c) {
  PriorityStore store(capacity_, alpha, c);
  for (std::size_t i = 0; i < size_; ++i) store.on_insert(i);
  heads_.push_back(std::move(store));
  return heads_.size() - 1;
}

PriorityStore& ReplayBuffer::priorities(std::size_t head) {
  if (head >= heads_.size()) throw Error(ErrorKind::OutOfRange, "no such priority head");
  return heads_[head];
}

const PriorityStore& ReplayBuffer::priorities(std::size_t head) const {
  if (head >= heads_.size()) throw Error(ErrorKind::OutOfRange, "no such priority head");
  return heads_[head];
}

std::size_t ReplayBuffer::push(Transition transition) {
  if (transition.state.size() != observation_dim_ || transition.next_state.size() != observation_dim_) {
    throw Error(ErrorKind::ShapeMismatch, "observation size " + std::to_string(transition.state.size()) +
                                              " does not match buffer size " + std::to_string(observation_dim_));
  }
  if (transition.action >= num_actions_) throw Error(ErrorKind::ShapeMismatch, "action out of range");
  if (!std::isfinite(transition.reward)) throw Error(ErrorKind::NonFinite, "reward is not finite");

  const std::size_t index = cursor_;
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(transition));
  } else {
    storage_[index] = std::move(transition);
  }
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  for (PriorityStore& store : heads_) store.on_insert(index);
  return index;
}

const Transition& ReplayBuffer::at(std::size_t index) const {
  if (index >= size_) throw Error(ErrorKind::OutOfRange, "buffer index " + std::to_string(index) + " out of range");
  return storage_[index];
}

std::vector<std::size_t> ReplayBuffer::chronological_indices() const {
  std::vector<std::size_t> out(size_);
  const std::size_t oldest = size_ < capacity_ ? 0 : cursor_;
  for (std::size_t k = 0; k < size_; ++k) out[k] = (oldest + k) % capacity_;
  return out;
}

SampleBatch sample_uniform(const ReplayBuffer& buffer, std::size_t batch_size, Rng& rng) {
  if (buffer.size() == 0) throw Error(ErrorKind::InsufficientData, "buffer is empty");
  if (batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
  const double p = 1.0 / static_cast<double>(buffer.size());
  SampleBatch batch;
  for (std::size_t k = 0; k < batch_size; ++k) batch.indices.push_back(pick(rng));
  batch.probabilities.assign(batch_size, p);
  batch.weights.assign(batch_size, 1.0);
  return batch;
}

SampleBatch sample_prioritized(const ReplayBuffer& buffer, const PriorityStore& store, std::size_t batch_size,
                               Rng& rng) {
  if (buffer.size() == 0) throw Error(ErrorKind::InsufficientData, "buffer is empty");
  if (batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be >= 1");
  if (store.size() != buffer.size()) throw Error(ErrorKind::ShapeMismatch, "priority store does not track buffer");
  const double total = store.total();
  if (!(total > 0.0)) throw Error(ErrorKind::AllZero, "all transformed priorities are zero");

  const double n = static_cast<double>(buffer.size());
  SampleBatch batch;
  batch.indices.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t index = store.tree().sample(uniform01(rng) * total);
    const double p = store.transformed(index) / total;
    batch.indices.push_back(index);
    batch.probabilities.push_back(p);
    batch.weights.push_back(1.0 / (n * p));
  }
  return batch;
}

SampleBatch sample_uniform_large_batch(const ReplayBuffer& buffer, std::size_t multiplier, std::size_t batch_size,
                                       Rng& rng) {
  const std::size_t count = multiplier * batch_size;
  if (count == 0) throw Error(ErrorKind::InvalidArgument, "large batch size must be >= 1");
  if (buffer.size() < count) {
    throw Error(ErrorKind::InsufficientData, "buffer holds " + std::to_string(buffer.size()) +
                                                 " transitions, large batch needs " + std::to_string(count));
  }
  std::vector<std::size_t> population(buffer.size());
  std::iota(population.begin(), population.end(), std::size_t{0});
  SampleBatch batch;
  batch.indices.reserve(count);
  std::sample(population.begin(), population.end(), std::back_inserter(batch.indices), count, rng);
  batch.probabilities.assign(count, 1.0 / static_cast<double>(buffer.size()));
  batch.weights.assign(count, 1.0);
  return batch;
}

void update_priorities(PriorityStore& store, std::span<const std::size_t> indices, std::span<const double> raw_values) {
  store.update(indices, raw_values);
}

void dump_buffer(const ReplayBuffer& buffer, std::ostream& out) {
  out.write(kBufferMagic, sizeof kBufferMagic - 1);
  io::write_pod<std::uint64_t>(out, buffer.observation_dim_);
  io::write_pod<std::uint64_t>(out, buffer.num_actions_);
  io::write_pod<std::uint64_t>(out, buffer.capacity_);
  io::write_pod<std::uint64_t>(out, buffer.size_);
  io::write_pod<std::uint64_t>(out, buffer.cursor_);
  for (std::size_t i = 0; i < buffer.size_; ++i) {
    const Transition& t = buffer.storage_[i];
    io::write_doubles(out, t.state);
    io::write_pod<std::uint64_t>(out, t.action);
    io::write_pod<double>(out, t.reward);
    io::write_doubles(out, t.next_state);
    io::write_pod<std::uint8_t>(out, t.done ? 1 : 0);
  }
  io::write_pod<std::uint64_t>(out, buffer.heads_.size());
  for (const PriorityStore& store : buffer.heads_) {
    io::write_pod<double>(out, store.alpha());
    io::write_pod<double>(out, store.c());
    io::write_pod<double>(out, store.max_seen());
    std::vector<double> raw(store.capacity());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = store.raw(i);
    io::write_doubles(out, raw);
  }
  if (!out) throw Error(ErrorKind::IoError, "failed to write replay buffer");
}

ReplayBuffer load_buffer(std::istream& in) {
  io::expect_magic(in, std::string(kBufferMagic, sizeof kBufferMagic - 1));
  const auto dim = io::read_pod<std::uint64_t>(in);
  const auto actions = io::read_pod<std::uint64_t>(in);
  const auto capacity = io::read_pod<std::uint64_t>(in);
  const auto size = io::read_pod<std::uint64_t>(in);
  const auto cursor = io::read_pod<std::uint64_t>(in);
  if (size > capacity || cursor >= capacity) throw Error(ErrorKind::IoError, "corrupt buffer header");

  ReplayBuffer buffer(capacity, dim, actions);
  for (std::size_t i = 0; i < size; ++i) {
    Transition t;
    t.state = io::read_doubles(in);
    t.action = io::read_pod<std::uint64_t>(in);
    t.reward = io::read_pod<double>(in);
    t.next_state = io::read_doubles(in);
    t.done = io::read_pod<std::uint8_t>(in) != 0;
    if (t.state.size() != dim || t.next_state.size() != dim || t.action >= actions) {
      throw Error(ErrorKind::IoError, "corrupt transition record");
    }
    buffer.storage_.push_back(std::move(t));
  }
  buffer.size_ = size;
  buffer.cursor_ = cursor;
  const auto heads = io::read_pod<std::uint64_t>(in);
  for (std::size_t h = 0; h < heads; ++h) {
    const double alpha = io::read_pod<double>(in);
    const double c = io::read_pod<double>(in);
    const double max_seen = io::read_pod<double>(in);
    PriorityStore store(capacity, alpha, c);
    store.restore(io::read_doubles(in), size, max_seen);
    buffer.heads_.push_back(std::move(store));
  }
  return buffer;
}

}  // namespace laber
