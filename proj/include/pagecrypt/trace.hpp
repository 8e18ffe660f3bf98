// Line-oriented client trace format, one event per line:
//
//   alloc <id> <len>
//   free <id>
//   write <id> <offset> <hexbytes>
//   read <id> <offset> <len>
//   stack <on|off>
//
// Region ids are assigned in alloc order (0, 1, 2, ...). The id `stack` names
// the client's stack region. Blank lines and lines starting with '#' are
// ignored.
#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pagecrypt/client_runtime.hpp"
#include "pagecrypt/common.hpp"

namespace pagecrypt {

enum class TraceOp : std::uint8_t { alloc, free, write, read, stack };

inline constexpr std::uint32_t kStackHandle = 0xffffffffU;

struct TraceEvent {
  TraceOp op = TraceOp::read;
  std::uint32_t region = 0;
  std::uint64_t offset = 0;
  std::uint64_t len = 0;
  std::vector<std::uint8_t> bytes;
  bool on = true;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 15]);
  }
  return out;
}

inline std::optional<std::vector<std::uint8_t>> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [p, ec] = std::from_chars(hex.data() + 2 * i, hex.data() + 2 * i + 2, out[i], 16);
    if (ec != std::errc{} || p != hex.data() + 2 * i + 2) return std::nullopt;
  }
  return out;
}

inline std::string format_event(const TraceEvent& ev) {
  auto id = [&] { return ev.region == kStackHandle ? std::string("stack") : std::to_string(ev.region); };
  switch (ev.op) {
    case TraceOp::alloc: return "alloc " + id() + " " + std::to_string(ev.len);
    case TraceOp::free: return "free " + id();
    case TraceOp::write: return "write " + id() + " " + std::to_string(ev.offset) + " " + to_hex(ev.bytes);
    case TraceOp::read: return "read " + id() + " " + std::to_string(ev.offset) + " " + std::to_string(ev.len);
    case TraceOp::stack: return std::string("stack ") + (ev.on ? "on" : "off");
  }
  return {};
}

inline std::string format_trace(const std::vector<TraceEvent>& events) {
  std::string out;
  for (const auto& ev : events) {
    out += format_event(ev);
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::uint64_t parse_u64(std::string_view s, std::size_t line_no) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ParseError("trace line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline TraceEvent parse_event(std::string_view line, std::size_t line_no, std::uint32_t expected_alloc_id) {
  const auto tok = detail::split_ws(line);
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError("trace line " + std::to_string(line_no) + ": " + why);
  };
  auto need = [&](std::size_t n) {
    if (tok.size() != n) throw fail("expected " + std::to_string(n - 1) + " arguments");
  };
  auto region_id = [&](std::string_view s) -> std::uint32_t {
    if (s == "stack") return kStackHandle;
    std::uint64_t v = detail::parse_u64(s, line_no);
    if (v >= kStackHandle) throw fail("region id out of range");
    return static_cast<std::uint32_t>(v);
  };

  if (tok.empty()) throw fail("empty event");
  TraceEvent ev;
  if (tok[0] == "alloc") {
    need(3);
    ev.op = TraceOp::alloc;
    ev.region = region_id(tok[1]);
    if (ev.region != expected_alloc_id)
      throw fail("alloc ids must be assigned in order, expected " + std::to_string(expected_alloc_id));
    ev.len = detail::parse_u64(tok[2], line_no);
    if (ev.len == 0) throw fail("alloc length must be positive");
  } else if (tok[0] == "free") {
    need(2);
    ev.op = TraceOp::free;
    ev.region = region_id(tok[1]);
  } else if (tok[0] == "write") {
    need(4);
    ev.op = TraceOp::write;
    ev.region = region_id(tok[1]);
    ev.offset = detail::parse_u64(tok[2], line_no);
    auto bytes = from_hex(tok[3]);
    if (!bytes || bytes->empty()) throw fail("bad hex payload");
    ev.bytes = std::move(*bytes);
    ev.len = ev.bytes.size();
  } else if (tok[0] == "read") {
    need(4);
    ev.op = TraceOp::read;
    ev.region = region_id(tok[1]);
    ev.offset = detail::parse_u64(tok[2], line_no);
    ev.len = detail::parse_u64(tok[3], line_no);
    if (ev.len == 0) throw fail("read length must be positive");
  } else if (tok[0] == "stack") {
    need(2);
    ev.op = TraceOp::stack;
    if (tok[1] == "on") ev.on = true;
    else if (tok[1] == "off") ev.on = false;
    else throw fail("stack takes on|off");
  } else {
    throw fail("unknown event '" + std::string(tok[0]) + "'");
  }
  return ev;
}

inline std::vector<TraceEvent> parse_trace(std::istream& in) {
  std::vector<TraceEvent> events;
  std::string line;
  std::size_t line_no = 0;
  std::uint32_t allocs = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0].starts_with('#')) continue;
    events.push_back(parse_event(line, line_no, allocs));
    if (events.back().op == TraceOp::alloc) ++allocs;
  }
  return events;
}

inline std::vector<TraceEvent> parse_trace(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_trace(in);
}

/// Applies trace events to a ClientSpace.
class TraceReplayer {
 public:
  explicit TraceReplayer(ClientSpace& space) : space_(&space) {}

  void apply(const TraceEvent& ev) {
    switch (ev.op) {
      case TraceOp::alloc:
        if (ev.region != handles_.size()) throw ContractViolation("alloc ids must be assigned in order");
        handles_.push_back(space_->alloc(ev.len));
        live_.push_back(true);
        break;
      case TraceOp::free:
        if (ev.region == kStackHandle) throw ContractViolation("the stack cannot be freed");
        if (ev.region >= handles_.size()) throw ContractViolation("free of an unknown region");
        if (!live_[ev.region]) throw ContractViolation("double free");
        space_->free(handles_[ev.region]);
        live_[ev.region] = false;
        break;
      case TraceOp::write:
        space_->write(address(ev), ev.bytes);
        break;
      case TraceOp::read:
        last_read_.assign(ev.len, 0);
        space_->read(address(ev), last_read_);
        break;
      case TraceOp::stack:
        space_->set_stack_protection(ev.on);
        break;
    }
  }

  void apply_all(const std::vector<TraceEvent>& events) {
    for (const auto& ev : events) apply(ev);
  }

  const std::vector<std::uint8_t>& last_read() const noexcept { return last_read_; }

  const Region& region(std::uint32_t handle) const {
    if (handle == kStackHandle) return space_->stack_region();
    return handles_.at(handle);
  }
  bool live(std::uint32_t handle) const { return handle == kStackHandle || live_.at(handle); }
  std::size_t region_count() const noexcept { return handles_.size(); }

 private:
  std::uint64_t address(const TraceEvent& ev) const {
    if (ev.region != kStackHandle && (ev.region >= handles_.size() || !live_[ev.region]))
      throw SegmentationViolation("access through an unknown or freed region id");
    const Region& r = region(ev.region);
    if (ev.offset >= r.len || ev.len > r.len - ev.offset)
      throw SegmentationViolation("access beyond the end of region");
    return r.base + ev.offset;
  }

  ClientSpace* space_;
  std::vector<Region> handles_;
  std::vector<bool> live_;
  std::vector<std::uint8_t> last_read_;
};

}  // namespace pagecrypt
