// Cold Boot dump emulation: snapshot every dump-visible byte of simulated RAM
// and look for sensitive data in it.
//
// A snapshot covers all frames of the physical memory pool, used or free.
// The only RAM left out is the workers' private key storage (32 bytes per
// worker), which stands in for GPU registers; its size is recorded so the
// accounting can be checked.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pagecrypt/cipher.hpp"
#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"
#include "pagecrypt/orchestrator.hpp"

namespace pagecrypt {

struct SnapshotRecord {
  RegionTag tag = RegionTag::server_misc;
  std::vector<std::uint8_t> bytes;
  /// Not serialized: attribution known only to in-process snapshots.
  std::optional<ClientId> owner;
  bool protected_page = true;

  bool is_zero() const {
    return std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return b == 0; });
  }
};

struct DumpSnapshot {
  std::vector<SnapshotRecord> records;
  std::uint64_t timestamp = 0;
  std::size_t excluded_bytes = 0;

  std::size_t total_bytes() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.bytes.size();
    return n;
  }

  /// Transfer buffers holding data, i.e. caught mid-transfer.
  std::size_t mid_transfer_buffers() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const SnapshotRecord& r) {
      return r.tag == RegionTag::transfer_buffer && !r.is_zero();
    }));
  }

  /// Plaintext pages inside the protection machinery, per client.
  std::map<ClientId, std::size_t> resident_pages() const {
    std::map<ClientId, std::size_t> out;
    for (const auto& r : records)
      if (r.tag == RegionTag::client_resident && r.owner && r.protected_page) ++out[*r.owner];
    return out;
  }

  /// Concatenated (tag: u8, len: u64 LE, bytes) records.
  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    out.reserve(total_bytes() + records.size() * 9);
    for (const auto& r : records) {
      out.push_back(static_cast<std::uint8_t>(r.tag));
      const std::uint64_t len = r.bytes.size();
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
      out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    return out;
  }

  static DumpSnapshot deserialize(std::span<const std::uint8_t> data) {
    DumpSnapshot snap;
    std::size_t pos = 0;
    while (pos < data.size()) {
      if (data.size() - pos < 9) throw ParseError("truncated snapshot record header");
      const std::uint8_t tag = data[pos];
      if (tag > static_cast<std::uint8_t>(RegionTag::server_misc)) throw ParseError("unknown snapshot region tag");
      std::uint64_t len = 0;
      for (int i = 0; i < 8; ++i) len |= std::uint64_t{data[pos + 1 + i]} << (8 * i);
      pos += 9;
      if (len > data.size() - pos) throw ParseError("truncated snapshot record body");
      SnapshotRecord r;
      r.tag = static_cast<RegionTag>(tag);
      r.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                     data.begin() + static_cast<std::ptrdiff_t>(pos + len));
      snap.records.push_back(std::move(r));
      pos += len;
    }
    return snap;
  }
};

/// Deep copy of all dump-visible state. The run must be paused at an event
/// boundary (or inside the mid-transfer hook).
inline DumpSnapshot take_snapshot(const Orchestrator& orch, std::uint64_t timestamp = 0) {
  DumpSnapshot snap;
  snap.timestamp = timestamp;
  snap.excluded_bytes = orch.pool().private_key_bytes();
  orch.ram().for_each_frame([&](FrameId, const FrameInfo& info, const PageBuf& page) {
    SnapshotRecord r;
    r.tag = info.in_use ? info.tag : RegionTag::server_misc;
    r.bytes.assign(page.bytes.begin(), page.bytes.end());
    if (info.in_use && info.tag != RegionTag::server_misc) r.owner = info.owner;
    r.protected_page = info.protected_page;
    snap.records.push_back(std::move(r));
  });
  return snap;
}

inline constexpr std::size_t kMinMarkerSize = 32;

struct Marker {
  std::string id;
  std::vector<std::uint8_t> bytes;
};

struct MarkerHit {
  std::string marker_id;
  RegionTag tag = RegionTag::server_misc;
  std::size_t record = 0;
  std::size_t offset = 0;
};

struct ExposureReport {
  /// Distinct snapshot bytes covered by marker occurrences.
  std::uint64_t plaintext_bytes_found = 0;
  std::map<ClientId, std::size_t> per_client_resident_pages;
  bool key_found = false;
  std::vector<MarkerHit> marker_hits;
  std::size_t mid_transfer_buffers = 0;

  std::size_t hits_in(RegionTag tag) const {
    return static_cast<std::size_t>(
        std::count_if(marker_hits.begin(), marker_hits.end(), [tag](const MarkerHit& h) { return h.tag == tag; }));
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "marker_id,region_tag,record,offset\n";
    for (const auto& h : marker_hits)
      out << h.marker_id << ',' << tag_name(h.tag) << ',' << h.record << ',' << h.offset << '\n';
    return out.str();
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "plaintext bytes found: " << plaintext_bytes_found << '\n'
        << "marker hits: " << marker_hits.size() << '\n'
        << "key found: " << (key_found ? "yes" : "no") << '\n'
        << "mid-transfer buffers: " << mid_transfer_buffers << '\n';
    for (RegionTag tag : {RegionTag::client_resident, RegionTag::store_ciphertext, RegionTag::transfer_buffer,
                          RegionTag::channel_internal, RegionTag::server_misc}) {
      if (auto n = hits_in(tag)) out << "  hits in " << tag_name(tag) << ": " << n << '\n';
    }
    for (const auto& [client, pages] : per_client_resident_pages)
      out << "client " << to_string(client) << " resident pages: " << pages << '\n';
    return out.str();
  }
};

/// Reports every occurrence of every marker in every region. Hits inside
/// stored ciphertext count as leaks like any other.
inline ExposureReport scan_markers(const DumpSnapshot& snap, const std::vector<Marker>& markers) {
  std::set<std::vector<std::uint8_t>> distinct;
  for (const auto& m : markers) {
    if (m.bytes.size() < kMinMarkerSize) throw ParameterError("marker '" + m.id + "' is shorter than 32 bytes");
    if (!distinct.insert(m.bytes).second) throw ParameterError("duplicate marker '" + m.id + "'");
  }

  ExposureReport report;
  report.per_client_resident_pages = snap.resident_pages();
  report.mid_transfer_buffers = snap.mid_transfer_buffers();

  std::vector<std::uint8_t> covered;
  for (std::size_t ri = 0; ri < snap.records.size(); ++ri) {
    const auto& rec = snap.records[ri];
    if (rec.is_zero()) continue;
    covered.assign(rec.bytes.size(), 0);
    for (const auto& m : markers) {
      const std::boyer_moore_horspool_searcher searcher(m.bytes.begin(), m.bytes.end());
      auto it = rec.bytes.begin();
      for (;;) {
        auto found = std::search(it, rec.bytes.end(), searcher);
        if (found == rec.bytes.end()) break;
        const auto off = static_cast<std::size_t>(found - rec.bytes.begin());
        report.marker_hits.push_back({m.id, rec.tag, ri, off});
        std::fill_n(covered.begin() + static_cast<std::ptrdiff_t>(off), m.bytes.size(), std::uint8_t{1});
        it = found + 1;
      }
    }
    report.plaintext_bytes_found += static_cast<std::uint64_t>(std::count(covered.begin(), covered.end(), 1));
  }
  return report;
}

inline constexpr std::size_t kKeyProbe = 16;

/// True iff any 16-byte substring of the key occurs anywhere in the dump.
inline bool scan_key(const DumpSnapshot& snap, const MasterKey& key) {
  const auto k = key.bytes();
  for (std::size_t start = 0; start + kKeyProbe <= k.size(); ++start) {
    const std::boyer_moore_horspool_searcher searcher(k.begin() + start, k.begin() + start + kKeyProbe);
    for (const auto& rec : snap.records) {
      if (std::search(rec.bytes.begin(), rec.bytes.end(), searcher) != rec.bytes.end()) return true;
    }
  }
  return false;
}

/// Byte-value histogram over every record with the given tag.
inline std::array<std::uint64_t, 256> byte_histogram(const DumpSnapshot& snap, RegionTag tag) {
  std::array<std::uint64_t, 256> h{};
  for (const auto& r : snap.records)
    if (r.tag == tag)
      for (std::uint8_t b : r.bytes) ++h[b];
  return h;
}

/// Largest bucket divided by the uniform expectation.
inline double histogram_peak_ratio(const std::array<std::uint64_t, 256>& h) {
  std::uint64_t total = 0, peak = 0;
  for (auto v : h) {
    total += v;
    peak = std::max(peak, v);
  }
  if (total == 0) return 0.0;
  return static_cast<double>(peak) / (static_cast<double>(total) / 256.0);
}

/// Exposure bound: plaintext marker bytes stay within one window of pages per
/// client plus one page per buffer caught mid-transfer, and no client has
/// more resident pages than the window.
inline bool within_exposure_bound(const ExposureReport& report, std::size_t window, std::size_t clients) {
  for (const auto& [client, pages] : report.per_client_resident_pages)
    if (pages > window) return false;
  const std::uint64_t bound =
      static_cast<std::uint64_t>(clients) * window * kPageSize + report.mid_transfer_buffers * kPageSize;
  return report.plaintext_bytes_found <= bound;
}

}  // namespace pagecrypt
