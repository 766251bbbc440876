#include "s4al/replay.hpp"

#include "s4al/error.hpp"

namespace s4al {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity >= 1, "replay buffer capacity must be at least 1");
}

void ReplayBuffer::push(std::size_t image) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(image);
  ++insertions_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) fail(ErrorKind::kEmptyBuffer, "cannot sample from an empty replay buffer");
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.index(items_.size())]);
  return out;
}

void ReplayBuffer::restore(std::vector<std::size_t> items, std::uint64_t insertions) {
  require(items.size() <= capacity_, "restored replay buffer exceeds capacity");
  items_.assign(items.begin(), items.end());
  insertions_ = insertions;
}

}  // namespace s4al
