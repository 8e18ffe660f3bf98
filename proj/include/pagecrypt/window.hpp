// Sliding window: the FIFO of a client's plaintext-resident pages.
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <unordered_set>

#include "pagecrypt/common.hpp"

namespace pagecrypt {

inline constexpr std::size_t kDefaultWindow = 16;
inline constexpr std::size_t kMaxWindow = 4096;

/// Bounded FIFO of page addresses. The server only sees faults, never hits,
/// so order is insertion order with no recency refresh. Size never exceeds
/// capacity.
class SlidingWindow {
 public:
  explicit SlidingWindow(std::size_t capacity = kDefaultWindow) : capacity_(capacity) {
    if (capacity == 0 || capacity > kMaxWindow)
      throw ParameterError("window capacity must be in 1..4096");
  }

  /// Appends `vaddr`; returns the evicted oldest entry if the window was full.
  std::optional<std::uint64_t> admit(std::uint64_t vaddr) {
    if (members_.contains(vaddr)) throw ContractViolation("page is already in the window");
    std::optional<std::uint64_t> evicted;
    if (queue_.size() == capacity_) {
      evicted = queue_.front();
      queue_.pop_front();
      members_.erase(*evicted);
    }
    queue_.push_back(vaddr);
    members_.insert(vaddr);
    return evicted;
  }

  /// The entry the next admit would evict, if any.
  std::optional<std::uint64_t> next_victim() const {
    if (queue_.size() < capacity_) return std::nullopt;
    return queue_.front();
  }

  bool remove(std::uint64_t vaddr) {
    if (members_.erase(vaddr) == 0) return false;
    queue_.erase(std::find(queue_.begin(), queue_.end(), vaddr));
    return true;
  }

  bool resident(std::uint64_t vaddr) const { return members_.contains(vaddr); }

  void clear() {
    queue_.clear();
    members_.clear();
  }

  std::size_t size() const noexcept { return queue_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  /// Oldest first.
  const std::deque<std::uint64_t>& entries() const noexcept { return queue_; }

 private:
  std::size_t capacity_;
  std::deque<std::uint64_t> queue_;
  std::unordered_set<std::uint64_t> members_;
};

}  // namespace pagecrypt
