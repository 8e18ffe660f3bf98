// Client/server plumbing: the fixed-size control message codec, the shared
// single-page transfer buffer, and a model of the kernel socket buffer that
// carries control messages.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"

namespace pagecrypt {

enum class MsgType : std::uint8_t {
  REGISTER = 1,
  REGISTER_ACK = 2,
  REGION_ADD = 3,
  REGION_REMOVE = 4,
  FAULT = 5,
  RESOLVE = 6,
  EVICT_REQ = 7,
  EVICT_DONE = 8,
  BYE = 9,
};

inline constexpr std::size_t kMsgSize = 21;
using WireMsg = std::array<std::uint8_t, kMsgSize>;

/// Control messages never carry page contents.
struct ControlMsg {
  MsgType type = MsgType::REGISTER;
  ClientId client{};
  std::uint64_t vaddr = 0;
  std::uint32_t len = 0;

  friend bool operator==(const ControlMsg&, const ControlMsg&) = default;
};

inline bool is_known_type(std::uint8_t tag) { return tag >= 1 && tag <= 9; }

/// type(1) | pid(4) | epoch(4) | vaddr(8) | len(4), integers little endian.
inline WireMsg encode_msg(const ControlMsg& m) {
  WireMsg out{};
  std::size_t pos = 0;
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out[pos++] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  put(static_cast<std::uint8_t>(m.type), 1);
  put(m.client.pid, 4);
  put(m.client.epoch, 4);
  put(m.vaddr, 8);
  put(m.len, 4);
  return out;
}

inline ControlMsg decode_msg(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kMsgSize)
    throw ProtocolError("control message must be 21 bytes, got " + std::to_string(bytes.size()));
  if (!is_known_type(bytes[0])) throw ProtocolError("unknown control message type");
  std::size_t pos = 1;
  auto get = [&](int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes[pos++]} << (8 * i);
    return v;
  };
  ControlMsg m;
  m.type = static_cast<MsgType>(bytes[0]);
  m.client.pid = static_cast<std::uint32_t>(get(4));
  m.client.epoch = static_cast<std::uint32_t>(get(4));
  m.vaddr = get(8);
  m.len = static_cast<std::uint32_t>(get(4));
  return m;
}

/// The page shared by one client and the server. It is all zero except while
/// a transfer is in flight; the receiving side scrubs it right after copying
/// the page out.
class TransferBuffer {
 public:
  TransferBuffer(PhysicalMemory& ram, ClientId owner) : frame_(ram, RegionTag::transfer_buffer, owner) {}

  void transfer_out(const PageBuf& page) {
    if (active_ || !frame_.page().is_zero())
      throw ProtocolError("transfer buffer is busy (overlapping transfers)");
    frame_.page() = page;
    active_ = true;
  }

  PageBuf transfer_in() {
    if (!active_) throw ProtocolError("no transfer in progress");
    PageBuf out = frame_.page();
    frame_.page().zeroize();
    active_ = false;
    return out;
  }

  /// Writes the page straight into `out` without a temporary copy.
  void transfer_in(PageBuf& out) {
    if (!active_) throw ProtocolError("no transfer in progress");
    out = frame_.page();
    frame_.page().zeroize();
    active_ = false;
  }

  /// Aborts an in-flight transfer, leaving the buffer zeroed.
  void cancel() noexcept {
    frame_.page().zeroize();
    active_ = false;
  }

  bool active() const noexcept { return active_; }
  bool is_zero() const noexcept { return frame_.page().is_zero(); }
  const PageBuf& contents() const noexcept { return frame_.page(); }

 private:
  Frame frame_;
  bool active_ = false;
};

/// Kernel-side socket buffer of one control connection. Like the real one it
/// is never erased: bytes stay until overwritten by later traffic, and the
/// frame is visible in memory dumps. Only encoded control messages go in.
class ControlChannel {
 public:
  ControlChannel(PhysicalMemory& ram, ClientId owner) : frame_(ram, RegionTag::channel_internal, owner) {}

  void send(const ControlMsg& m) {
    const WireMsg wire = encode_msg(m);
    auto& bytes = frame_.page().bytes;
    for (std::uint8_t b : wire) {
      bytes[head_] = b;
      head_ = (head_ + 1) % bytes.size();
    }
    ++messages_;
    last_ = m;
  }

  std::uint64_t messages() const noexcept { return messages_; }
  const ControlMsg& last() const noexcept { return last_; }

 private:
  Frame frame_;
  std::size_t head_ = 0;
  std::uint64_t messages_ = 0;
  ControlMsg last_{};
};

}  // namespace pagecrypt
