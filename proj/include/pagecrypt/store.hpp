// Per-client encrypted page store: an ordered map vaddr -> ciphertext frame.
#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"

namespace pagecrypt {

/// Ciphertext pages of one client, sorted by virtual address. The store owns
/// its copies; removal scrubs the frame.
class EncryptedPageStore {
 public:
  EncryptedPageStore(PhysicalMemory& ram, ClientId owner) : ram_(&ram), owner_(owner) {}

  void insert(std::uint64_t vaddr, const PageBuf& cipher) {
    if (!is_page_aligned(vaddr)) throw ContractViolation("store key is not page aligned");
    if (pages_.contains(vaddr)) throw ContractViolation("duplicate store entry");
    Frame frame(*ram_, RegionTag::store_ciphertext, owner_);
    frame.page() = cipher;
    pages_.emplace(vaddr, std::move(frame));
  }

  std::optional<PageBuf> lookup(std::uint64_t vaddr) const {
    auto it = pages_.find(vaddr);
    if (it == pages_.end()) return std::nullopt;
    return it->second.page();
  }

  bool contains(std::uint64_t vaddr) const { return pages_.contains(vaddr); }

  void remove(std::uint64_t vaddr) {
    auto it = pages_.find(vaddr);
    if (it == pages_.end()) throw ContractViolation("removing a missing store entry");
    pages_.erase(it);
  }

  void clear() { pages_.clear(); }

  std::size_t size() const { return pages_.size(); }

  /// Keys in increasing order.
  std::vector<std::uint64_t> addresses() const {
    std::vector<std::uint64_t> out;
    out.reserve(pages_.size());
    for (const auto& [vaddr, frame] : pages_) out.push_back(vaddr);
    return out;
  }

 private:
  PhysicalMemory* ram_;
  ClientId owner_;
  std::map<std::uint64_t, Frame> pages_;
};

/// ClientId -> sub-store. Registration and lookup are thread safe; each
/// sub-store is then used by a single owner.
class StoreRegistry {
 public:
  explicit StoreRegistry(PhysicalMemory& ram) : ram_(&ram) {}

  EncryptedPageStore& open(ClientId client) {
    std::unique_lock lock(mu_);
    auto& slot = stores_[client];
    if (!slot) slot = std::make_unique<EncryptedPageStore>(*ram_, client);
    return *slot;
  }

  void insert(ClientId client, std::uint64_t vaddr, const PageBuf& cipher) {
    open(client).insert(vaddr, cipher);
  }

  std::optional<PageBuf> lookup(ClientId client, std::uint64_t vaddr) const {
    const EncryptedPageStore* s = find(client);
    return s ? s->lookup(vaddr) : std::nullopt;
  }

  void remove(ClientId client, std::uint64_t vaddr) {
    EncryptedPageStore* s = find(client);
    if (s == nullptr) throw ContractViolation("removing a missing store entry");
    s->remove(vaddr);
  }

  /// Unknown clients are ignored.
  void drop_client(ClientId client) {
    std::unique_ptr<EncryptedPageStore> victim;
    {
      std::unique_lock lock(mu_);
      auto it = stores_.find(client);
      if (it == stores_.end()) return;
      victim = std::move(it->second);
      stores_.erase(it);
    }
  }

  EncryptedPageStore* find(ClientId client) {
    std::shared_lock lock(mu_);
    auto it = stores_.find(client);
    return it == stores_.end() ? nullptr : it->second.get();
  }

  const EncryptedPageStore* find(ClientId client) const {
    std::shared_lock lock(mu_);
    auto it = stores_.find(client);
    return it == stores_.end() ? nullptr : it->second.get();
  }

 private:
  PhysicalMemory* ram_;
  mutable std::shared_mutex mu_;
  std::map<ClientId, std::unique_ptr<EncryptedPageStore>> stores_;
};

}  // namespace pagecrypt
