#include <random>

#include <gtest/gtest.h>

#include "oracles/flat_memory.hpp"
#include "oracles/helpers.hpp"
#include "pagecrypt/bench.hpp"
#include "pagecrypt/trace.hpp"

using namespace pagecrypt;

TEST(Trace, ParseAndFormat) {
  const std::string text =
      "# comment\n"
      "alloc 0 8192\n"
      "\n"
      "write 0 10 deadbeef\n"
      "read 0 10 4\n"
      "write stack 0 01\n"
      "stack off\n"
      "free 0\n";
  const auto events = parse_trace(text);
  ASSERT_EQ(events.size(), 6u);
  EXPECT_EQ(events[0].op, TraceOp::alloc);
  EXPECT_EQ(events[0].len, 8192u);
  EXPECT_EQ(events[1].bytes, (std::vector<std::uint8_t>{0xde, 0xad, 0xbe, 0xef}));
  EXPECT_EQ(events[3].region, kStackHandle);
  EXPECT_FALSE(events[4].on);
  EXPECT_EQ(parse_trace(format_trace(events)), events);
}

TEST(Trace, ParseErrorsNameTheLine) {
  auto line_of = [](const std::string& text) {
    try {
      parse_trace(text);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(line_of("alloc 0 10\nwrite 0 1 xyz\n").find("line 2"), std::string::npos);
  EXPECT_NE(line_of("alloc 1 10\n").find("line 1"), std::string::npos);
  EXPECT_NE(line_of("alloc 0 0\n").find("line 1"), std::string::npos);
  EXPECT_NE(line_of("alloc 0 10\nread 0 0 0\n").find("line 2"), std::string::npos);
  EXPECT_NE(line_of("bogus\n").find("line 1"), std::string::npos);
  EXPECT_NE(line_of("stack maybe\n").find("line 1"), std::string::npos);
  EXPECT_NE(line_of("free\n").find("line 1"), std::string::npos);
}

TEST(Trace, ReplayErrors) {
  Orchestrator orch(testutil::small_config(2));
  ClientSpace c(orch, 1);
  TraceReplayer rep(c);
  rep.apply_all(parse_trace("alloc 0 4096\nwrite 0 0 aa\n"));
  EXPECT_THROW(rep.apply(parse_event("read 0 4095 2", 1, 1)), SegmentationViolation);
  EXPECT_THROW(rep.apply(parse_event("read 3 0 1", 1, 1)), SegmentationViolation);
  rep.apply(parse_event("free 0", 1, 1));
  EXPECT_THROW(rep.apply(parse_event("read 0 0 1", 1, 1)), SegmentationViolation);
  EXPECT_THROW(rep.apply(parse_event("free 0", 1, 1)), ContractViolation);
}

TEST(Trace, ReplayMatchesFlatMemoryThroughEvictions) {
  std::mt19937_64 rng(3);
  for (std::size_t w : {1, 2, 5}) {
    Orchestrator orch(testutil::small_config(w, 1));
    ClientSpace c(orch, 1);
    TraceReplayer rep(c);
    oracle::FlatMemory flat;
    std::vector<TraceEvent> events;
    events.push_back(parse_event("alloc 0 40000", 1, 0));
    events.push_back(parse_event("alloc 1 5000", 1, 1));
    for (int i = 0; i < 3000; ++i) {
      TraceEvent ev;
      const bool stack = rng() % 5 == 0;
      ev.region = stack ? kStackHandle : static_cast<std::uint32_t>(rng() % 2);
      const std::uint64_t size = stack ? 16 * kPageSize : (ev.region == 0 ? 40960 : 8192);
      ev.len = 1 + rng() % 300;
      ev.offset = rng() % (size - ev.len);
      if (rng() % 2) {
        ev.op = TraceOp::write;
        ev.bytes.resize(ev.len);
        for (auto& b : ev.bytes) b = static_cast<std::uint8_t>(rng());
      } else {
        ev.op = TraceOp::read;
      }
      events.push_back(ev);
    }
    for (const auto& ev : events) {
      rep.apply(ev);
      flat.apply(ev);
      if (ev.op == TraceOp::read) {
        ASSERT_EQ(rep.last_read(), flat.last_read());
      }
    }
    for (const auto& [id, bytes] : flat.regions()) {
      std::vector<std::uint8_t> got(bytes.size());
      c.read(rep.region(id).base, got);
      ASSERT_EQ(got, bytes) << "region " << id << " W=" << w;
    }
  }
}
