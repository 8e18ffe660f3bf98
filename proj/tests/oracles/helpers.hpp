// Shared test utilities.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pagecrypt/pagecrypt.hpp"

namespace testutil {

inline pagecrypt::PageBuf random_page(std::mt19937_64& rng) {
  pagecrypt::PageBuf p;
  for (std::size_t i = 0; i < pagecrypt::kPageSize; i += 8) {
    std::uint64_t v = rng();
    for (int b = 0; b < 8; ++b) p.bytes[i + b] = static_cast<std::uint8_t>(v >> (8 * b));
  }
  return p;
}

inline pagecrypt::MasterKey random_key(std::mt19937_64& rng) {
  std::array<std::uint8_t, 32> k{};
  for (auto& b : k) b = static_cast<std::uint8_t>(rng());
  return pagecrypt::MasterKey(std::span<const std::uint8_t, 32>(k));
}

inline pagecrypt::Marker random_marker(std::mt19937_64& rng, std::string id, std::size_t len = 32) {
  pagecrypt::Marker m{std::move(id), std::vector<std::uint8_t>(len)};
  for (auto& b : m.bytes) b = static_cast<std::uint8_t>(rng());
  return m;
}

/// Keysource that installs `key` and lets the test keep its own copy.
inline pagecrypt::KeySource fixed_key(const pagecrypt::MasterKey& key) {
  return [key](std::span<std::uint8_t, pagecrypt::kKeySize> out) {
    std::copy(key.bytes().begin(), key.bytes().end(), out.begin());
  };
}

/// Server with a fixed key and a small worker count.
inline pagecrypt::OrchestratorConfig small_config(std::size_t window, std::size_t workers = 2) {
  pagecrypt::OrchestratorConfig c;
  c.window = window;
  c.workers = workers;
  return c;
}

/// Counts frames whose bytes contain `needle`.
inline std::size_t frames_containing(const pagecrypt::PhysicalMemory& ram, std::span<const std::uint8_t> needle) {
  std::size_t n = 0;
  ram.for_each_frame([&](pagecrypt::FrameId, const pagecrypt::FrameInfo&, const pagecrypt::PageBuf& page) {
    if (std::search(page.bytes.begin(), page.bytes.end(), needle.begin(), needle.end()) != page.bytes.end()) ++n;
  });
  return n;
}

}  // namespace testutil
