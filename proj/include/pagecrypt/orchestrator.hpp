// The server. Resolves client page faults, keeps each client's sliding window,
// and moves pages between client residency, the transfer buffer, the worker
// pool and the encrypted store.
//
// Fault resolution for one client is strictly serialized:
//
//   1. if the window is full, the oldest page is pulled through the transfer
//      buffer and queued for encryption;
//   2. the faulting page is looked up in the store; if found its ciphertext is
//      queued for decryption, otherwise it is a first touch and resolves to a
//      zero page;
//   3. the evicted page's ciphertext goes into the store and the client drops
//      its plaintext copy; the faulting page's store entry is removed;
//   4. the faulting page enters the window.
//
// Evicting before admitting keeps the number of plaintext pages at or below
// the window capacity at every instant.
#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"
#include "pagecrypt/store.hpp"
#include "pagecrypt/transport.hpp"
#include "pagecrypt/window.hpp"
#include "pagecrypt/workers.hpp"

namespace pagecrypt {

struct Metrics {
  std::uint64_t faults = 0;
  std::uint64_t first_touch_faults = 0;
  std::uint64_t evictions = 0;
  std::uint64_t encrypt_ops = 0;
  std::uint64_t decrypt_ops = 0;
  std::uint64_t fault_ns_total = 0;
  std::uint64_t crypto_ns_total = 0;

  bool identities_hold() const noexcept {
    return decrypt_ops == faults - first_touch_faults && encrypt_ops == evictions;
  }

  /// Counters only; the timing fields are not deterministic.
  bool same_counters(const Metrics& o) const noexcept {
    return faults == o.faults && first_touch_faults == o.first_touch_faults &&
           evictions == o.evictions && encrypt_ops == o.encrypt_ops && decrypt_ops == o.decrypt_ops;
  }

  Metrics& operator+=(const Metrics& o) noexcept {
    faults += o.faults;
    first_touch_faults += o.first_touch_faults;
    evictions += o.evictions;
    encrypt_ops += o.encrypt_ops;
    decrypt_ops += o.decrypt_ops;
    fault_ns_total += o.fault_ns_total;
    crypto_ns_total += o.crypto_ns_total;
    return *this;
  }
};

struct FaultEvent {
  ClientId client{};
  std::uint64_t vaddr = 0;
  std::uint64_t timestamp = 0;
};

/// The client-side agent that touches the client's address space on behalf
/// of the server.
class DataThread {
 public:
  virtual ~DataThread() = default;
  /// Copy the plaintext of resident page `vaddr` into the transfer buffer.
  virtual void provide_page(std::uint64_t vaddr, TransferBuffer& buffer) = 0;
  /// Scrub and unmap resident page `vaddr`.
  virtual void drop_page(std::uint64_t vaddr) = 0;
};

struct OrchestratorConfig {
  std::size_t window = kDefaultWindow;
  /// 0 selects the hardware parallelism.
  std::size_t workers = 0;
  PoolOptions pool{};
};

class Orchestrator {
 public:
  explicit Orchestrator(OrchestratorConfig config = {}, const KeySource& keysource = os_keysource())
      : config_(config), store_(ram_), pool_(ram_, config.pool) {
    if (config.window == 0 || config.window > kMaxWindow)
      throw ParameterError("window capacity must be in 1..4096");
    pool_.init(config.workers == 0 ? default_worker_count() : config.workers, keysource);
  }

  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  ~Orchestrator() {
    {
      std::unique_lock lock(mu_);
      handlers_.clear();
    }
    try {
      pool_.shutdown();
    } catch (...) {
    }
  }

  ClientId register_client(std::uint32_t pid, DataThread& data_thread) {
    std::unique_lock lock(mu_);
    ClientId id{pid, next_epoch_[pid]++};
    auto h = std::make_unique<Handler>(ram_, id, data_thread, config_.window);
    h->channel.send({MsgType::REGISTER, id, 0, 0});
    h->channel.send({MsgType::REGISTER_ACK, id, 0, 0});
    store_.open(id);
    handlers_.emplace(id, std::move(h));
    return id;
  }

  /// Drops the client's store, window and transfer buffer; metrics stay
  /// readable. Unknown clients are ignored.
  void unregister_client(ClientId client) {
    std::unique_ptr<Handler> h;
    {
      std::unique_lock lock(mu_);
      auto it = handlers_.find(client);
      if (it == handlers_.end()) return;
      h = std::move(it->second);
      handlers_.erase(it);
      frozen_[client] = h->metrics;
    }
    h->channel.send({MsgType::BYE, client, 0, 0});
    store_.drop_client(client);
    h->window.clear();
    h->xfer.cancel();
  }

  void add_region(ClientId client, std::uint64_t base, std::uint64_t len) {
    Handler& h = handler(client);
    if (!is_page_aligned(base) || len == 0 || !is_page_aligned(len))
      throw ProtocolError("region must be page aligned and non-empty");
    auto next = h.regions.lower_bound(base);
    if (next != h.regions.end() && next->first < base + len) throw ProtocolError("overlapping region");
    if (next != h.regions.begin()) {
      auto prev = std::prev(next);
      if (prev->first + prev->second > base) throw ProtocolError("overlapping region");
    }
    h.regions.emplace(base, len);
    h.channel.send({MsgType::REGION_ADD, client, base, clamp_len(len)});
  }

  /// Forgets every page of the region: window entries and stored ciphertext.
  /// The client scrubs its own resident copies.
  void remove_region(ClientId client, std::uint64_t base) {
    Handler& h = handler(client);
    auto it = h.regions.find(base);
    if (it == h.regions.end()) throw ProtocolError("removing an unknown region");
    const std::uint64_t len = it->second;
    EncryptedPageStore& store = store_.open(client);
    for (std::uint64_t page = base; page < base + len; page += kPageSize) {
      h.window.remove(page);
      if (store.contains(page)) store.remove(page);
    }
    h.regions.erase(it);
    h.channel.send({MsgType::REGION_REMOVE, client, base, clamp_len(len)});
  }

  /// Resolves a fault and returns the plaintext to install. The caller owns
  /// the returned copy and must scrub it after installing.
  PageBuf handle_fault(const FaultEvent& ev) {
    Handler& h = handler(ev.client);
    const auto start = Clock::now();
    const std::uint64_t vaddr = page_floor(ev.vaddr);
    if (!h.covers(vaddr)) throw ProtocolError("fault on an unregistered address");
    if (h.window.resident(vaddr)) throw ProtocolError("fault on a resident page");
    h.channel.send({MsgType::FAULT, ev.client, vaddr, 0});

    std::optional<std::uint64_t> victim = h.window.next_victim();
    CompletionHandle encrypting;
    if (victim) encrypting = begin_eviction(h, *victim);

    EncryptedPageStore& store = store_.open(ev.client);
    std::optional<PageBuf> cipher = store.lookup(vaddr);
    CompletionHandle decrypting;
    if (cipher) {
      decrypting = pool_.submit({ev.client, vaddr, Direction::decrypt, *cipher});
      cipher->zeroize();
    }

    if (encrypting) finish_eviction(h, *victim, encrypting);

    PageBuf plain;
    if (decrypting) {
      const auto wait_start = Clock::now();
      decrypting->wait();
      h.metrics.crypto_ns_total += elapsed_ns(wait_start);
      plain = decrypting->page();
      store.remove(vaddr);
      ++h.metrics.decrypt_ops;
    } else {
      ++h.metrics.first_touch_faults;
    }
    h.window.admit(vaddr);
    ++h.metrics.faults;
    h.channel.send({MsgType::RESOLVE, ev.client, vaddr, static_cast<std::uint32_t>(kPageSize)});
    h.metrics.fault_ns_total += elapsed_ns(start);
    return plain;
  }

  /// Encrypts resident page `vaddr` into the store and makes the client drop
  /// its plaintext. On a transfer failure nothing changes and ServerError is
  /// thrown.
  void evict_page(ClientId client, std::uint64_t vaddr) {
    Handler& h = handler(client);
    if (!h.window.resident(vaddr)) throw ContractViolation("evicting a non-resident page");
    auto c = begin_eviction(h, vaddr);
    finish_eviction(h, vaddr, c);
  }

  Metrics metrics(ClientId client) const {
    std::shared_lock lock(mu_);
    if (auto it = handlers_.find(client); it != handlers_.end()) return it->second->metrics;
    if (auto it = frozen_.find(client); it != frozen_.end()) return it->second;
    throw ContractViolation("unknown client " + to_string(client));
  }

  bool is_registered(ClientId client) const {
    std::shared_lock lock(mu_);
    return handlers_.contains(client);
  }

  std::size_t resident_count(ClientId client) const { return handler(client).window.size(); }
  std::vector<std::uint64_t> window_entries(ClientId client) const {
    const auto& e = handler(client).window.entries();
    return {e.begin(), e.end()};
  }
  bool transfer_idle(ClientId client) const {
    const Handler& h = handler(client);
    return !h.xfer.active() && h.xfer.is_zero();
  }
  std::uint64_t channel_messages(ClientId client) const { return handler(client).channel.messages(); }

  std::size_t window_capacity() const noexcept { return config_.window; }
  const OrchestratorConfig& config() const noexcept { return config_; }

  PhysicalMemory& ram() noexcept { return ram_; }
  const PhysicalMemory& ram() const noexcept { return ram_; }
  StoreRegistry& store() noexcept { return store_; }
  const StoreRegistry& store() const noexcept { return store_; }
  WorkerPool& pool() noexcept { return pool_; }
  const WorkerPool& pool() const noexcept { return pool_; }

  /// Called with the plaintext sitting in the transfer buffer, between the
  /// client's copy-in and the server's copy-out. Test instrumentation.
  void set_mid_transfer_hook(std::function<void(ClientId)> hook) { mid_transfer_hook_ = std::move(hook); }

  /// Makes the next eviction transfer of `client` fail. Test instrumentation.
  void inject_transfer_failure(ClientId client) { handler(client).fail_next_transfer = true; }

 private:
  using Clock = std::chrono::steady_clock;

  struct Handler {
    Handler(PhysicalMemory& ram, ClientId client, DataThread& dt, std::size_t capacity)
        : id(client), data(&dt), window(capacity), xfer(ram, client), channel(ram, client) {}

    bool covers(std::uint64_t vaddr) const {
      auto it = regions.upper_bound(vaddr);
      if (it == regions.begin()) return false;
      --it;
      return vaddr < it->first + it->second;
    }

    ClientId id;
    DataThread* data;
    SlidingWindow window;
    TransferBuffer xfer;
    ControlChannel channel;
    Metrics metrics;
    std::map<std::uint64_t, std::uint64_t> regions;
    bool fail_next_transfer = false;
  };

  static std::uint64_t elapsed_ns(Clock::time_point since) {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - since).count());
  }

  static std::uint32_t clamp_len(std::uint64_t len) {
    return len > 0xffffffffULL ? 0xffffffffU : static_cast<std::uint32_t>(len);
  }

  Handler& handler(ClientId client) const {
    std::shared_lock lock(mu_);
    auto it = handlers_.find(client);
    if (it == handlers_.end()) throw ProtocolError("unknown client " + to_string(client));
    return *it->second;
  }

  CompletionHandle begin_eviction(Handler& h, std::uint64_t vaddr) {
    h.channel.send({MsgType::EVICT_REQ, h.id, vaddr, 0});
    if (h.fail_next_transfer) {
      h.fail_next_transfer = false;
      throw ServerError("transfer of page failed");
    }
    try {
      h.data->provide_page(vaddr, h.xfer);
    } catch (const Error& e) {
      h.xfer.cancel();
      throw ServerError(std::string("transfer of page failed: ") + e.what());
    }
    if (mid_transfer_hook_) mid_transfer_hook_(h.id);
    CryptoRequest req{h.id, vaddr, Direction::encrypt, {}};
    h.xfer.transfer_in(req.page);
    return pool_.submit(std::move(req));
  }

  void finish_eviction(Handler& h, std::uint64_t vaddr, const CompletionHandle& c) {
    const auto start = Clock::now();
    c->wait();
    h.metrics.crypto_ns_total += elapsed_ns(start);
    store_.open(h.id).insert(vaddr, c->page());
    c->page().zeroize();
    h.data->drop_page(vaddr);
    h.window.remove(vaddr);
    ++h.metrics.evictions;
    ++h.metrics.encrypt_ops;
    h.channel.send({MsgType::EVICT_DONE, h.id, vaddr, 0});
  }

  OrchestratorConfig config_;
  PhysicalMemory ram_;
  StoreRegistry store_;
  WorkerPool pool_;
  mutable std::shared_mutex mu_;
  std::map<ClientId, std::unique_ptr<Handler>> handlers_;
  std::map<ClientId, Metrics> frozen_;
  std::map<std::uint32_t, std::uint32_t> next_epoch_;
  std::function<void(ClientId)> mid_transfer_hook_;
};

}  // namespace pagecrypt
