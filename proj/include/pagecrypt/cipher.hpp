// Page-granular ChaCha20.
//
// Every keystream block is produced from the master key and a 128-bit block
// seed made of the page's virtual address, the client pid and the index of the
// 64-byte block inside the page (0..63). The seed occupies the four state words
// that RFC 8439 uses for counter and nonce:
//
//   word 12..13  vaddr      (little endian, low word first)
//   word 14      pid
//   word 15      block index
//
// A page is encrypted by XORing it with the 64 consecutive keystream blocks,
// so encryption and decryption are the same operation.
#pragma once

#include <sys/random.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <functional>
#include <span>

#include "pagecrypt/common.hpp"

namespace pagecrypt {

inline constexpr std::size_t kKeySize = 32;
inline constexpr std::size_t kBlockSize = 64;
inline constexpr std::size_t kBlocksPerPage = kPageSize / kBlockSize;  // 64
inline constexpr std::size_t kLaneUnitBytes = 2 * kBlockSize;          // two blocks per lane step
inline constexpr std::size_t kLaneUnits = kPageSize / kLaneUnitBytes;   // 32, one warp

using KeystreamBlock = std::array<std::uint8_t, kBlockSize>;

/// The 256-bit master key. Destruction and moves leave zeros behind.
class MasterKey {
 public:
  MasterKey() = default;
  explicit MasterKey(std::span<const std::uint8_t, kKeySize> bytes) noexcept {
    std::copy(bytes.begin(), bytes.end(), bytes_.begin());
  }
  MasterKey(const MasterKey&) = default;
  MasterKey& operator=(const MasterKey&) = default;
  MasterKey(MasterKey&& other) noexcept : bytes_(other.bytes_) { other.zeroize(); }
  MasterKey& operator=(MasterKey&& other) noexcept {
    if (this != &other) {
      bytes_ = other.bytes_;
      other.zeroize();
    }
    return *this;
  }
  ~MasterKey() { zeroize(); }

  /// Fresh key from the kernel CSPRNG.
  static MasterKey generate() {
    MasterKey key;
    fill_from_os(key.bytes_);
    return key;
  }

  static void fill_from_os(std::span<std::uint8_t, kKeySize> out) {
    std::size_t got = 0;
    while (got < out.size()) {
      ssize_t n = ::getrandom(out.data() + got, out.size() - got, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw InitError("getrandom failed");
      }
      got += static_cast<std::size_t>(n);
    }
  }

  std::span<const std::uint8_t, kKeySize> bytes() const noexcept { return bytes_; }
  std::span<std::uint8_t, kKeySize> mutable_bytes() noexcept { return bytes_; }

  void zeroize() noexcept { secure_zero(bytes_.data(), bytes_.size()); }
  bool is_zero() const noexcept {
    return std::all_of(bytes_.begin(), bytes_.end(), [](std::uint8_t b) { return b == 0; });
  }

  friend bool operator==(const MasterKey&, const MasterKey&) = default;

 private:
  std::array<std::uint8_t, kKeySize> bytes_{};
};

/// Per-block seed: (vaddr, pid, block index).
struct BlockSeed {
  std::uint64_t vaddr = 0;
  std::uint32_t pid = 0;
  std::uint32_t block_index = 0;

  void validate() const {
    if (!is_page_aligned(vaddr)) throw ContractViolation("block seed vaddr is not page aligned");
    if (block_index >= kBlocksPerPage) throw ContractViolation("block index out of range 0..63");
  }

  /// The 16-byte seed value as it enters the cipher state.
  std::array<std::uint8_t, 16> serialize() const noexcept {
    std::array<std::uint8_t, 16> out{};
    for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(vaddr >> (8 * i));
    for (int i = 0; i < 4; ++i) out[8 + i] = static_cast<std::uint8_t>(pid >> (8 * i));
    for (int i = 0; i < 4; ++i) out[12 + i] = static_cast<std::uint8_t>(block_index >> (8 * i));
    return out;
  }

  friend bool operator==(const BlockSeed&, const BlockSeed&) = default;
};

namespace detail {

inline constexpr std::array<std::uint32_t, 4> kSigma = {0x61707865, 0x3320646e, 0x79622d32,
                                                        0x6b206574};  // "expand 32-byte k"

inline std::uint32_t load_le32(const std::uint8_t* p) noexcept {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline void store_le32(std::uint8_t* p, std::uint32_t v) noexcept {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

template <std::size_t Width>
struct LaneVec {
  typedef std::uint32_t type __attribute__((vector_size(4 * Width)));
};
template <>
struct LaneVec<1> {
  using type = std::uint32_t;
};

/// Widest batch the target handles in registers.
#if defined(__AVX512F__)
inline constexpr std::size_t kNativeWidth = 16;
#elif defined(__AVX2__)
inline constexpr std::size_t kNativeWidth = 8;
#else
inline constexpr std::size_t kNativeWidth = 4;
#endif

/// Runs `Width` ChaCha20 blocks side by side. They share key and words
/// 12..14; word 15 takes consecutive values from `first_word15`. Each state
/// word is a vector holding that word for every block. On return `out[i][w]`
/// is word i of block w, and all other key-derived state has been cleared.
template <std::size_t Width>
[[gnu::always_inline]] inline void chacha20_state(std::span<const std::uint8_t, kKeySize> key,
                                                  const std::array<std::uint32_t, 3>& words12_14,
                                                  std::uint32_t first_word15,
                                                  std::uint32_t (&out)[16][Width]) noexcept {
  using V = typename LaneVec<Width>::type;
  V in[16];
  V x[16];
  for (int i = 0; i < 4; ++i) in[i] = V{} + kSigma[i];
  for (int i = 0; i < 8; ++i) in[4 + i] = V{} + load_le32(key.data() + 4 * i);
  for (int i = 0; i < 3; ++i) in[12 + i] = V{} + words12_14[i];
  if constexpr (Width == 1) {
    in[15] = first_word15;
  } else {
    for (std::size_t w = 0; w < Width; ++w) in[15][w] = first_word15 + static_cast<std::uint32_t>(w);
  }
  for (int i = 0; i < 16; ++i) x[i] = in[i];

#define PAGECRYPT_ROTL(v, n) (((v) << (n)) | ((v) >> (32 - (n))))
#define PAGECRYPT_QR(a, b, c, d)                                \
  x[a] += x[b]; x[d] = PAGECRYPT_ROTL(x[d] ^ x[a], 16);        \
  x[c] += x[d]; x[b] = PAGECRYPT_ROTL(x[b] ^ x[c], 12);        \
  x[a] += x[b]; x[d] = PAGECRYPT_ROTL(x[d] ^ x[a], 8);         \
  x[c] += x[d]; x[b] = PAGECRYPT_ROTL(x[b] ^ x[c], 7);

  for (int round = 0; round < 10; ++round) {
    PAGECRYPT_QR(0, 4, 8, 12)
    PAGECRYPT_QR(1, 5, 9, 13)
    PAGECRYPT_QR(2, 6, 10, 14)
    PAGECRYPT_QR(3, 7, 11, 15)
    PAGECRYPT_QR(0, 5, 10, 15)
    PAGECRYPT_QR(1, 6, 11, 12)
    PAGECRYPT_QR(2, 7, 8, 13)
    PAGECRYPT_QR(3, 4, 9, 14)
  }
#undef PAGECRYPT_QR
#undef PAGECRYPT_ROTL

  for (int i = 0; i < 16; ++i) {
    x[i] += in[i];
    std::memcpy(out[i], &x[i], sizeof(x[i]));
  }
  secure_zero(x, sizeof(x));
  secure_zero(in, sizeof(in));
}

/// Writes `Width` keystream blocks to `out`.
template <std::size_t Width>
inline void chacha20_blocks(std::span<const std::uint8_t, kKeySize> key,
                            const std::array<std::uint32_t, 3>& words12_14, std::uint32_t first_word15,
                            std::uint8_t* out) noexcept {
  alignas(64) std::uint32_t ks[16][Width];
  chacha20_state<Width>(key, words12_14, first_word15, ks);
  for (std::size_t w = 0; w < Width; ++w)
    for (int i = 0; i < 16; ++i) store_le32(out + w * kBlockSize + 4 * i, ks[i][w]);
  secure_zero(ks, sizeof(ks));
}

inline std::array<std::uint32_t, 3> seed_words(std::uint64_t vaddr, std::uint32_t pid) noexcept {
  return {static_cast<std::uint32_t>(vaddr), static_cast<std::uint32_t>(vaddr >> 32), pid};
}

/// XORs `Width` consecutive keystream blocks, starting at `first_block`, into
/// `data`.
template <std::size_t Width>
inline void xor_blocks(std::span<const std::uint8_t, kKeySize> key, std::uint64_t vaddr,
                       std::uint32_t pid, std::uint32_t first_block, std::uint8_t* data) noexcept {
  alignas(64) std::uint32_t ks[16][Width];
  chacha20_state<Width>(key, seed_words(vaddr, pid), first_block, ks);
  for (std::size_t w = 0; w < Width; ++w) {
    for (int i = 0; i < 16; ++i) {
      std::uint8_t* p = data + w * kBlockSize + 4 * i;
      store_le32(p, load_le32(p) ^ ks[i][w]);
    }
  }
  secure_zero(ks, sizeof(ks));
}

inline void check_page_address(std::uint64_t vaddr) {
  if (!is_page_aligned(vaddr)) throw ContractViolation("page address is not page aligned");
}

}  // namespace detail

/// One 64-byte ChaCha20 keystream block for `seed`.
inline KeystreamBlock chacha20_block(const MasterKey& key, const BlockSeed& seed) {
  seed.validate();
  KeystreamBlock out{};
  detail::chacha20_blocks<1>(key.bytes(), detail::seed_words(seed.vaddr, seed.pid), seed.block_index,
                             out.data());
  return out;
}

/// The 4096 keystream bytes of a page: blocks 0..63 in order.
inline PageBuf page_keystream(const MasterKey& key, std::uint64_t vaddr, std::uint32_t pid) {
  detail::check_page_address(vaddr);
  PageBuf out;
  constexpr std::size_t kWidth = detail::kNativeWidth;
  for (std::uint32_t b = 0; b < kBlocksPerPage; b += kWidth) {
    detail::chacha20_blocks<kWidth>(key.bytes(), detail::seed_words(vaddr, pid), b,
                                    out.bytes.data() + b * kBlockSize);
  }
  return out;
}

/// Encrypts or decrypts `page` in place.
inline void crypt_page_inplace(const MasterKey& key, std::uint64_t vaddr, std::uint32_t pid,
                               PageBuf& page) {
  detail::check_page_address(vaddr);
  constexpr std::size_t kWidth = detail::kNativeWidth;
  for (std::uint32_t b = 0; b < kBlocksPerPage; b += kWidth) {
    detail::xor_blocks<kWidth>(key.bytes(), vaddr, pid, b, page.bytes.data() + b * kBlockSize);
  }
}

inline PageBuf crypt_page(const MasterKey& key, std::uint64_t vaddr, std::uint32_t pid,
                          const PageBuf& page) {
  PageBuf out = page;
  crypt_page_inplace(key, vaddr, pid, out);
  return out;
}

/// Same result as crypt_page, with the page split into 32 lane units of 128
/// bytes (two blocks each). Lane `l` owns units l, l + lanes, l + 2*lanes ...;
/// with 32 lanes that is one unit per lane, the warp layout. Lanes run in
/// lock-step groups of kNativeWidth / 2, so a group of adjacent lanes at the
/// same step covers consecutive units and shares one vector pass.
inline void parallel_crypt_page_inplace(std::span<const std::uint8_t, kKeySize> key,
                                        std::uint64_t vaddr, std::uint32_t pid, PageBuf& page,
                                        std::size_t lanes) {
  if (lanes == 0) throw ContractViolation("lane count must be positive");
  detail::check_page_address(vaddr);
  constexpr std::size_t kGroup = detail::kNativeWidth / 2;
  std::uint8_t* data = page.bytes.data();
  for (std::size_t step = 0; step * lanes < kLaneUnits; ++step) {
    const std::size_t first = step * lanes;
    const std::size_t active = std::min(lanes, kLaneUnits - first);
    std::size_t lane = 0;
    for (; lane + kGroup <= active; lane += kGroup) {
      const std::size_t unit = first + lane;
      detail::xor_blocks<2 * kGroup>(key, vaddr, pid, static_cast<std::uint32_t>(2 * unit),
                                     data + unit * kLaneUnitBytes);
    }
    for (; lane < active; ++lane) {
      const std::size_t unit = first + lane;
      detail::xor_blocks<2>(key, vaddr, pid, static_cast<std::uint32_t>(2 * unit), data + unit * kLaneUnitBytes);
    }
  }
}

inline PageBuf parallel_crypt_page(const MasterKey& key, std::uint64_t vaddr, std::uint32_t pid,
                                   const PageBuf& page, std::size_t lanes) {
  PageBuf out = page;
  parallel_crypt_page_inplace(key.bytes(), vaddr, pid, out, lanes);
  return out;
}

}  // namespace pagecrypt
