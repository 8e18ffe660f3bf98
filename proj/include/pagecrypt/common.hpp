// Shared vocabulary: page geometry, client identity, the page buffer and the
// error hierarchy used by every pagecrypt component.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace pagecrypt {

inline constexpr std::size_t kPageSize = 4096;
inline constexpr std::uint64_t kPageMask = kPageSize - 1;

constexpr bool is_page_aligned(std::uint64_t addr) noexcept { return (addr & kPageMask) == 0; }
constexpr std::uint64_t page_floor(std::uint64_t addr) noexcept { return addr & ~kPageMask; }
constexpr std::uint64_t page_round_up(std::uint64_t len) noexcept {
  return (len + kPageMask) & ~kPageMask;
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-order client/server traffic.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Access to an address outside every registered region of a client.
class SegmentationViolation : public Error {
 public:
  using Error::Error;
};

class AllocationError : public Error {
 public:
  using Error::Error;
};

/// Fault resolution aborted on the server side; the client state is unchanged.
class ServerError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class InitError : public Error {
 public:
  using Error::Error;
};

/// Malformed trace or metrics file; the message names the offending line.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Overwrite `len` bytes with zeros. The empty asm statement keeps the
/// compiler from treating the memset as a dead store.
inline void secure_zero(void* ptr, std::size_t len) noexcept {
  std::memset(ptr, 0, len);
  __asm__ __volatile__("" : : "r"(ptr) : "memory");
}

/// Client identity as seen by the server. `epoch` disambiguates a reused pid.
struct ClientId {
  std::uint32_t pid = 0;
  std::uint32_t epoch = 0;

  friend auto operator<=>(const ClientId&, const ClientId&) = default;
};

inline std::string to_string(const ClientId& c) {
  return std::to_string(c.pid) + "." + std::to_string(c.epoch);
}

struct ClientIdHash {
  std::size_t operator()(const ClientId& c) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{c.pid} << 32) | c.epoch);
  }
};

/// One 4096-byte page image: the unit of encryption, transfer and zeroization.
struct alignas(64) PageBuf {
  std::array<std::uint8_t, kPageSize> bytes{};

  void zeroize() noexcept { secure_zero(bytes.data(), bytes.size()); }

  /// OR-reduction over the whole page; runtime does not depend on content.
  bool is_zero() const noexcept {
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < kPageSize; i += 8) {
      std::uint64_t w;
      std::memcpy(&w, bytes.data() + i, 8);
      acc |= w;
    }
    return acc == 0;
  }

  std::span<std::uint8_t, kPageSize> span() noexcept { return bytes; }
  std::span<const std::uint8_t, kPageSize> span() const noexcept { return bytes; }

  friend bool operator==(const PageBuf&, const PageBuf&) = default;
};

}  // namespace pagecrypt
