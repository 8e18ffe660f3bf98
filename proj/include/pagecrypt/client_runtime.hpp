// Model of a protected client process: its registered regions, its resident
// plaintext pages, and the data thread the server drives during evictions.
//
// Every allocation is an anonymous region registered with the server; pages
// are demand-faulted on first access. The stack is a fixed region that takes
// part in the fault machinery only when stack protection is on.
#pragma once

#include <cstdlib>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"
#include "pagecrypt/orchestrator.hpp"

namespace pagecrypt {

enum class RegionKind : std::uint8_t { anon, stack };

struct Region {
  std::uint64_t base = 0;
  std::uint64_t len = 0;
  RegionKind kind = RegionKind::anon;

  bool contains(std::uint64_t vaddr) const noexcept { return vaddr >= base && vaddr - base < len; }
  std::uint64_t pages() const noexcept { return len / kPageSize; }
  friend bool operator==(const Region&, const Region&) = default;
};

inline constexpr std::uint64_t kHeapBase = 0x0000'0001'0000'0000ULL;
inline constexpr std::uint64_t kHeapLimit = 0x0000'7000'0000'0000ULL;
inline constexpr std::uint64_t kStackBase = 0x0000'7ffe'0000'0000ULL;
inline constexpr std::uint64_t kStackSize = 1ULL << 20;

/// Stack protection default: on, unless PAGECRYPT_STACK=0.
inline bool default_stack_protection() {
  const char* v = std::getenv("PAGECRYPT_STACK");
  return v == nullptr || std::string_view(v) != "0";
}

class ClientSpace final : public DataThread {
 public:
  ClientSpace(Orchestrator& orch, std::uint32_t pid, std::optional<bool> stack_protection = std::nullopt)
      : orch_(&orch),
        stack_{kStackBase, kStackSize, RegionKind::stack},
        stack_protection_(stack_protection.value_or(default_stack_protection())) {
    id_ = orch_->register_client(pid, *this);
  }

  ClientSpace(const ClientSpace&) = delete;
  ClientSpace& operator=(const ClientSpace&) = delete;

  ~ClientSpace() override {
    try {
      exit();
    } catch (...) {
    }
  }

  /// Frees every region, scrubs the stack and disconnects from the server.
  void exit() {
    if (exited_) return;
    while (!regions_.empty()) free(regions_.begin()->second);
    resident_.clear();
    unprotected_.clear();
    orch_->unregister_client(id_);
    exited_ = true;
  }

  /// Maps a new anonymous region of `len` bytes rounded up to whole pages.
  /// Addresses come from a bump allocator with one unmapped guard page
  /// between regions.
  Region alloc(std::uint64_t len) {
    if (len == 0) throw ContractViolation("allocation length must be positive");
    const std::uint64_t rounded = page_round_up(len);
    if (rounded < len || next_base_ + rounded > kHeapLimit || next_base_ + rounded < next_base_)
      throw AllocationError("simulated address space exhausted");
    Region r{next_base_, rounded, RegionKind::anon};
    orch_->add_region(id_, r.base, r.len);
    regions_.emplace(r.base, r);
    next_base_ += rounded + kPageSize;
    return r;
  }

  /// Scrubs the region's resident pages, drops its ciphertext and
  /// unregisters it.
  void free(const Region& region) {
    auto it = regions_.find(region.base);
    if (region.kind == RegionKind::stack) throw ContractViolation("the stack cannot be freed");
    if (it == regions_.end() || it->second != region) throw ContractViolation("double free or unknown region");
    for (std::uint64_t page = region.base; page < region.base + region.len; page += kPageSize)
      resident_.erase(page);
    orch_->remove_region(id_, region.base);
    regions_.erase(it);
  }

  void set_stack_protection(bool on) {
    if (stack_touched_) throw ContractViolation("stack protection must be set before the first stack access");
    stack_protection_ = on;
  }

  bool stack_protection() const noexcept { return stack_protection_; }
  const Region& stack_region() const noexcept { return stack_; }

  std::uint8_t read_byte(std::uint64_t vaddr) { return page_for(vaddr).bytes[vaddr & kPageMask]; }
  void write_byte(std::uint64_t vaddr, std::uint8_t value) { page_for(vaddr).bytes[vaddr & kPageMask] = value; }

  void read(std::uint64_t vaddr, std::span<std::uint8_t> out) {
    std::size_t done = 0;
    while (done < out.size()) {
      const std::uint64_t at = vaddr + done;
      const std::size_t off = at & kPageMask;
      const std::size_t n = std::min<std::size_t>(kPageSize - off, out.size() - done);
      const PageBuf& page = page_for(at);
      std::memcpy(out.data() + done, page.bytes.data() + off, n);
      done += n;
    }
  }

  void write(std::uint64_t vaddr, std::span<const std::uint8_t> data) {
    std::size_t done = 0;
    while (done < data.size()) {
      const std::uint64_t at = vaddr + done;
      const std::size_t off = at & kPageMask;
      const std::size_t n = std::min<std::size_t>(kPageSize - off, data.size() - done);
      PageBuf& page = page_for(at);
      std::memcpy(page.bytes.data() + off, data.data() + done, n);
      done += n;
    }
  }

  /// The region containing `vaddr`; SegmentationViolation if none.
  const Region& region_of(std::uint64_t vaddr) const {
    if (stack_.contains(vaddr)) return stack_;
    auto it = regions_.upper_bound(vaddr);
    if (it != regions_.begin()) {
      --it;
      if (it->second.contains(vaddr)) return it->second;
    }
    throw SegmentationViolation("access to unmapped address");
  }

  bool is_resident(std::uint64_t vaddr) const { return resident_.contains(page_floor(vaddr)); }
  std::size_t resident_pages() const noexcept { return resident_.size(); }
  std::size_t region_count() const noexcept { return regions_.size(); }

  ClientId id() const noexcept { return id_; }
  Orchestrator& orchestrator() noexcept { return *orch_; }

  std::uint64_t faults_raised() const noexcept { return faults_raised_; }
  std::uint64_t stack_faults() const noexcept { return stack_faults_; }

  // DataThread
  void provide_page(std::uint64_t vaddr, TransferBuffer& buffer) override {
    auto it = resident_.find(vaddr);
    if (it == resident_.end()) throw ProtocolError("eviction request for a non-resident page");
    buffer.transfer_out(it->second.page());
  }

  void drop_page(std::uint64_t vaddr) override {
    if (resident_.erase(vaddr) == 0) throw ProtocolError("drop request for a non-resident page");
  }

 private:
  PageBuf& page_for(std::uint64_t vaddr) {
    if (exited_) throw ContractViolation("client has exited");
    const Region& region = region_of(vaddr);
    const std::uint64_t page = page_floor(vaddr);
    const bool is_stack = region.kind == RegionKind::stack;
    if (is_stack) {
      stack_touched_ = true;
      if (!stack_protection_) {
        auto it = unprotected_.find(page);
        if (it == unprotected_.end())
          it = unprotected_.emplace(page, Frame(orch_->ram(), RegionTag::client_resident, id_, false)).first;
        return it->second.page();
      }
      if (!stack_registered_) {
        orch_->add_region(id_, stack_.base, stack_.len);
        stack_registered_ = true;
      }
    }
    if (auto it = resident_.find(page); it != resident_.end()) return it->second.page();

    PageBuf plain = orch_->handle_fault({id_, page, ++clock_});
    ++faults_raised_;
    if (is_stack) ++stack_faults_;
    Frame frame(orch_->ram(), RegionTag::client_resident, id_);
    frame.page() = plain;
    plain.zeroize();
    return resident_.emplace(page, std::move(frame)).first->second.page();
  }

  Orchestrator* orch_;
  ClientId id_{};
  Region stack_;
  bool stack_protection_;
  bool stack_touched_ = false;
  bool stack_registered_ = false;
  bool exited_ = false;
  std::uint64_t next_base_ = kHeapBase;
  std::uint64_t clock_ = 0;
  std::uint64_t faults_raised_ = 0;
  std::uint64_t stack_faults_ = 0;
  std::map<std::uint64_t, Region> regions_;
  std::unordered_map<std::uint64_t, Frame> resident_;
  std::unordered_map<std::uint64_t, Frame> unprotected_;
};

}  // namespace pagecrypt
