#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "s4al/rng.hpp"

namespace s4al {

// FIFO store of train-image indices feeding the balanced ClassMix stream.
// Only ids are kept: pseudo labels are recomputed by the current teacher
// whenever an entry is sampled.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t insertions() const { return insertions_; }
  std::vector<std::size_t> items() const { return {items_.begin(), items_.end()}; }

  void push(std::size_t image);
  // n uniform draws with replacement.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng) const;

  void restore(std::vector<std::size_t> items, std::uint64_t insertions);

 private:
  std::size_t capacity_;
  std::deque<std::size_t> items_;
  std::uint64_t insertions_ = 0;
};

}  // namespace s4al
