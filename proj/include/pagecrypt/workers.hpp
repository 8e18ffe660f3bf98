// Crypto worker pool.
//
// Each worker is a long-lived service loop that owns a private copy of the
// master key and one bounded MPSC ring. Producers (the per-client handlers)
// push requests, the worker pops them one at a time, runs the page cipher
// with the 32-lane layout and signals the completion. The key never leaves
// worker-private state once installed: the staging copy is scrubbed, and
// shutdown scrubs the worker copies, after which the pool cannot be reused.
#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "pagecrypt/cipher.hpp"
#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"

namespace pagecrypt {

/// Bounded multiple-producer single-consumer ring. Slot sequence numbers
/// follow Vyukov's bounded queue; push() blocks while the ring is full.
template <class T>
class MpscRing {
 public:
  explicit MpscRing(std::size_t capacity) : mask_(capacity - 1), cells_(capacity) {
    if (capacity < 2 || (capacity & (capacity - 1)) != 0)
      throw ParameterError("ring capacity must be a power of two >= 2");
    for (std::size_t i = 0; i < capacity; ++i) cells_[i].seq.store(i, std::memory_order_relaxed);
  }

  bool try_push(T& value) {
    std::size_t pos = tail_.load(std::memory_order_relaxed);
    for (;;) {
      Cell& cell = cells_[pos & mask_];
      std::size_t seq = cell.seq.load(std::memory_order_acquire);
      auto diff = static_cast<std::intptr_t>(seq) - static_cast<std::intptr_t>(pos);
      if (diff == 0) {
        if (tail_.compare_exchange_weak(pos, pos + 1, std::memory_order_relaxed)) {
          cell.value = std::move(value);
          cell.seq.store(pos + 1, std::memory_order_release);
          pushes_.fetch_add(1, std::memory_order_release);
          pushes_.notify_one();
          return true;
        }
      } else if (diff < 0) {
        return false;
      } else {
        pos = tail_.load(std::memory_order_relaxed);
      }
    }
  }

  void push(T value) {
    for (;;) {
      std::uint32_t seen = pops_.load(std::memory_order_acquire);
      if (try_push(value)) return;
      pops_.wait(seen, std::memory_order_acquire);
    }
  }

  /// Consumer side only.
  std::optional<T> try_pop() {
    Cell& cell = cells_[head_ & mask_];
    std::size_t seq = cell.seq.load(std::memory_order_acquire);
    if (static_cast<std::intptr_t>(seq) - static_cast<std::intptr_t>(head_ + 1) < 0) return std::nullopt;
    std::optional<T> out(std::move(cell.value));
    cell.value = T{};
    cell.seq.store(head_ + mask_ + 1, std::memory_order_release);
    ++head_;
    pops_.fetch_add(1, std::memory_order_release);
    pops_.notify_all();
    return out;
  }

  /// Consumer side only. Blocks until an element arrives or the ring is
  /// closed and drained.
  std::optional<T> pop() {
    for (;;) {
      std::uint32_t seen = pushes_.load(std::memory_order_acquire);
      if (auto v = try_pop()) return v;
      if (closed_.load(std::memory_order_acquire)) return try_pop();
      pushes_.wait(seen, std::memory_order_acquire);
    }
  }

  void close() {
    closed_.store(true, std::memory_order_release);
    pushes_.fetch_add(1, std::memory_order_release);
    pushes_.notify_all();
  }

  std::size_t capacity() const noexcept { return mask_ + 1; }

 private:
  struct Cell {
    std::atomic<std::size_t> seq{0};
    T value{};
  };

  std::size_t mask_;
  std::vector<Cell> cells_;
  alignas(64) std::atomic<std::size_t> tail_{0};
  alignas(64) std::size_t head_ = 0;
  alignas(64) std::atomic<std::uint32_t> pushes_{0};
  alignas(64) std::atomic<std::uint32_t> pops_{0};
  std::atomic<bool> closed_{false};
};

enum class Direction : std::uint8_t { encrypt, decrypt };

/// Completion slot of one request. Holds the producer's private page copy,
/// transformed in place by the worker. Scrubbed on destruction.
class Completion {
 public:
  Completion() = default;
  Completion(const Completion&) = delete;
  Completion& operator=(const Completion&) = delete;
  ~Completion() { page_.zeroize(); }

  void wait() const { done_.wait(0, std::memory_order_acquire); }
  bool ready() const { return done_.load(std::memory_order_acquire) != 0; }

  /// Valid after wait().
  PageBuf& page() noexcept { return page_; }
  const PageBuf& page() const noexcept { return page_; }

 private:
  friend class WorkerPool;
  void signal() {
    done_.store(1, std::memory_order_release);
    done_.notify_all();
  }

  PageBuf page_;
  std::atomic<std::uint32_t> done_{0};
};

using CompletionHandle = std::shared_ptr<Completion>;

/// `direction` is informational: the cipher is its own inverse.
struct CryptoRequest {
  ClientId client{};
  std::uint64_t vaddr = 0;
  Direction direction = Direction::encrypt;
  PageBuf page;
};

/// Fills the span with the 32 key bytes. Throwing aborts pool initialization.
using KeySource = std::function<void(std::span<std::uint8_t, kKeySize>)>;

inline KeySource os_keysource() {
  return [](std::span<std::uint8_t, kKeySize> out) { MasterKey::fill_from_os(out); };
}

struct PoolOptions {
  std::size_t ring_capacity = 64;
  /// Lanes per page, the warp width.
  std::size_t lanes = kLaneUnits;
  /// Debug-only: leave the staged key in server memory. Positive control for
  /// the key scanner; never set in a compliant run.
  bool leak_key = false;
};

inline std::size_t default_worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

class WorkerPool {
 public:
  explicit WorkerPool(PhysicalMemory& ram, PoolOptions options = {}) : ram_(&ram), options_(options) {}
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;
  ~WorkerPool() {
    try {
      shutdown();
    } catch (...) {
      force_stop();
    }
  }

  /// Generates the key into a staging frame of server memory, copies it into
  /// every worker and scrubs the staging frame. Callable once per pool.
  void init(std::size_t n_workers, const KeySource& keysource) {
    if (initialized_) throw InitError("worker pool is already initialized");
    if (n_workers == 0) throw ParameterError("worker count must be positive");
    initialized_ = true;

    staging_ = Frame(*ram_, RegionTag::server_misc);
    auto staged = std::span<std::uint8_t, kKeySize>(staging_.page().bytes.data(), kKeySize);
    try {
      keysource(staged);
    } catch (const std::exception& e) {
      staging_.page().zeroize();
      throw InitError(std::string("key source failed: ") + e.what());
    }

    workers_.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) {
      auto w = std::make_unique<Worker>(options_.ring_capacity);
      w->key = MasterKey(std::span<const std::uint8_t, kKeySize>(staged));
      workers_.push_back(std::move(w));
    }
    if (!options_.leak_key) staging_.page().zeroize();

    for (auto& w : workers_) {
      Worker* raw = w.get();
      raw->thread = std::thread([this, raw] { service_loop(*raw); });
    }
    running_ = true;
  }

  CompletionHandle submit(CryptoRequest&& req) {
    if (!running_.load(std::memory_order_acquire)) throw ContractViolation("worker pool is not running");
    detail::check_page_address(req.vaddr);
    auto completion = std::make_shared<Completion>();
    completion->page_ = req.page;
    req.page.zeroize();
    in_flight_.fetch_add(1, std::memory_order_acq_rel);
    Worker& w = *workers_[worker_for(req.client)];
    w.ring.push(Job{req.client, req.vaddr, req.direction, completion});
    return completion;
  }

  /// Submits and waits; convenience for callers with one page in flight.
  PageBuf transform(ClientId client, std::uint64_t vaddr, Direction dir, const PageBuf& page) {
    CryptoRequest req{client, vaddr, dir, page};
    auto c = submit(std::move(req));
    c->wait();
    return c->page();
  }

  /// Scrubs every worker key. Fails while requests are in flight; repeated
  /// calls are no-ops.
  void shutdown() {
    if (!initialized_ || stopped_) return;
    if (in_flight_.load(std::memory_order_acquire) != 0)
      throw ContractViolation("worker pool shutdown with requests in flight");
    force_stop();
  }

  /// Stable client -> worker affinity, preserving per-client order.
  std::size_t worker_for(ClientId client) const noexcept {
    std::uint64_t h = (std::uint64_t{client.pid} << 32) | client.epoch;
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return static_cast<std::size_t>(h % workers_.size());
  }

  bool running() const noexcept { return running_.load(std::memory_order_acquire); }
  std::size_t size() const noexcept { return workers_.size(); }
  std::size_t in_flight() const noexcept { return in_flight_.load(std::memory_order_acquire); }
  std::uint64_t processed(std::size_t worker) const {
    return workers_.at(worker)->processed.load(std::memory_order_relaxed);
  }

  /// Bytes of worker-private key storage: the only RAM excluded from dumps.
  std::size_t private_key_bytes() const noexcept { return kKeySize * workers_.size(); }

  /// Test hook: whether every worker-private key copy is zero.
  bool worker_keys_zeroized() const {
    for (const auto& w : workers_)
      if (!w->key.is_zero()) return false;
    return true;
  }

 private:
  struct Job {
    ClientId client{};
    std::uint64_t vaddr = 0;
    Direction direction = Direction::encrypt;
    CompletionHandle completion;
  };

  struct Worker {
    explicit Worker(std::size_t capacity) : ring(capacity) {}
    MpscRing<Job> ring;
    MasterKey key;
    std::thread thread;
    std::atomic<std::uint64_t> processed{0};
  };

  void service_loop(Worker& w) {
    while (auto job = w.ring.pop()) {
      parallel_crypt_page_inplace(w.key.bytes(), job->vaddr, job->client.pid, job->completion->page_,
                                  options_.lanes);
      w.processed.fetch_add(1, std::memory_order_relaxed);
      in_flight_.fetch_sub(1, std::memory_order_acq_rel);
      job->completion->signal();
    }
    w.key.zeroize();
  }

  void force_stop() noexcept {
    if (stopped_) return;
    stopped_ = true;
    running_.store(false, std::memory_order_release);
    for (auto& w : workers_) w->ring.close();
    for (auto& w : workers_)
      if (w->thread.joinable()) w->thread.join();
    for (auto& w : workers_) w->key.zeroize();
    if (staging_ && !options_.leak_key) staging_.page().zeroize();
  }

  PhysicalMemory* ram_;
  PoolOptions options_;
  Frame staging_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<bool> running_{false};
  bool initialized_ = false;
  bool stopped_ = false;
};

}  // namespace pagecrypt
