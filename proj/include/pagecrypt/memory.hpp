// Simulated physical RAM.
//
// Every page-sized buffer that a Cold Boot dump could see (client plaintext,
// stored ciphertext, transfer buffers, socket buffers, server scratch) lives in
// a frame of this pool. Released frames go back to a free list and remain part
// of RAM, so a buffer that is not scrubbed before release is still visible to
// the analyzer. release() scrubs, which is the zero-on-free rule.
#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

#include "pagecrypt/common.hpp"

namespace pagecrypt {

enum class RegionTag : std::uint8_t {
  client_resident = 0,
  store_ciphertext = 1,
  transfer_buffer = 2,
  channel_internal = 3,
  server_misc = 4,
};

inline const char* tag_name(RegionTag tag) {
  switch (tag) {
    case RegionTag::client_resident: return "client_resident";
    case RegionTag::store_ciphertext: return "store_ciphertext";
    case RegionTag::transfer_buffer: return "transfer_buffer";
    case RegionTag::channel_internal: return "channel_internal";
    case RegionTag::server_misc: return "server_misc";
  }
  return "unknown";
}

using FrameId = std::uint32_t;

struct FrameInfo {
  RegionTag tag = RegionTag::server_misc;
  ClientId owner{};
  bool in_use = false;
  /// False for plaintext pages outside the protection machinery (an
  /// unprotected stack).
  bool protected_page = true;
};

class PhysicalMemory {
 public:
  PhysicalMemory() = default;
  PhysicalMemory(const PhysicalMemory&) = delete;
  PhysicalMemory& operator=(const PhysicalMemory&) = delete;

  FrameId allocate(RegionTag tag, ClientId owner = {}, bool protected_page = true) {
    std::lock_guard lock(mu_);
    FrameId id;
    if (!free_.empty()) {
      id = free_.back();
      free_.pop_back();
    } else {
      id = static_cast<FrameId>(frames_.size());
      frames_.emplace_back();
      info_.emplace_back();
    }
    info_[id] = FrameInfo{tag, owner, true, protected_page};
    return id;
  }

  /// Scrubs the frame and returns it to the free list.
  void release(FrameId id) {
    std::lock_guard lock(mu_);
    check(id);
    frames_[id].zeroize();
    info_[id] = FrameInfo{};
    free_.push_back(id);
  }

  /// Frame storage has a stable address for the lifetime of the pool.
  PageBuf& frame(FrameId id) {
    std::lock_guard lock(mu_);
    check(id);
    return frames_[id];
  }

  const PageBuf& frame(FrameId id) const {
    std::lock_guard lock(mu_);
    check(id);
    return frames_[id];
  }

  std::size_t frame_count() const {
    std::lock_guard lock(mu_);
    return frames_.size();
  }

  std::size_t frames_in_use() const {
    std::lock_guard lock(mu_);
    return frames_.size() - free_.size();
  }

  /// Visits every frame, used or free, under the pool lock.
  template <class Fn>
  void for_each_frame(Fn&& fn) const {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < frames_.size(); ++i) fn(static_cast<FrameId>(i), info_[i], frames_[i]);
  }

 private:
  void check(FrameId id) const {
    if (id >= frames_.size() || !info_[id].in_use) throw ContractViolation("invalid frame id");
  }

  mutable std::mutex mu_;
  std::deque<PageBuf> frames_;
  std::vector<FrameInfo> info_;
  std::vector<FrameId> free_;
};

/// Owning handle for one frame; releases (and so scrubs) it on destruction.
class Frame {
 public:
  Frame() = default;
  Frame(PhysicalMemory& ram, RegionTag tag, ClientId owner = {}, bool protected_page = true)
      : ram_(&ram), id_(ram.allocate(tag, owner, protected_page)), page_(&ram.frame(id_)) {}
  Frame(const Frame&) = delete;
  Frame& operator=(const Frame&) = delete;
  Frame(Frame&& o) noexcept : ram_(o.ram_), id_(o.id_), page_(o.page_) { o.ram_ = nullptr; }
  Frame& operator=(Frame&& o) noexcept {
    if (this != &o) {
      reset();
      ram_ = o.ram_;
      id_ = o.id_;
      page_ = o.page_;
      o.ram_ = nullptr;
    }
    return *this;
  }
  ~Frame() { reset(); }

  void reset() noexcept {
    if (ram_ != nullptr) {
      ram_->release(id_);
      ram_ = nullptr;
    }
  }

  explicit operator bool() const noexcept { return ram_ != nullptr; }
  FrameId id() const noexcept { return id_; }
  PageBuf& page() noexcept { return *page_; }
  const PageBuf& page() const noexcept { return *page_; }

 private:
  PhysicalMemory* ram_ = nullptr;
  FrameId id_ = 0;
  PageBuf* page_ = nullptr;
};

}  // namespace pagecrypt
