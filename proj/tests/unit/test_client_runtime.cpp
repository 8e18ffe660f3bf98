#include <cstdlib>
#include <random>

#include <gtest/gtest.h>

#include "oracles/helpers.hpp"
#include "pagecrypt/analyzer.hpp"
#include "pagecrypt/client_runtime.hpp"

using namespace pagecrypt;

TEST(ClientSpace, AllocRoundsAndIsDemandPaged) {
  Orchestrator orch(testutil::small_config(4));
  ClientSpace c(orch, 1);
  const Region one = c.alloc(1);
  EXPECT_EQ(one.len, kPageSize);
  const Region two = c.alloc(8192);
  EXPECT_EQ(two.pages(), 2u);
  EXPECT_EQ(c.faults_raised(), 0u);
  EXPECT_TRUE(one.base + one.len <= two.base || two.base + two.len <= one.base);
  EXPECT_THROW(c.alloc(0), ContractViolation);
  EXPECT_THROW(c.alloc(~0ULL), AllocationError);
}

TEST(ClientSpace, WriteReadOneFault) {
  Orchestrator orch(testutil::small_config(4));
  ClientSpace c(orch, 1);
  const Region r = c.alloc(kPageSize);
  c.write_byte(r.base + 17, 0xab);
  EXPECT_EQ(c.read_byte(r.base + 17), 0xab);
  EXPECT_EQ(c.faults_raised(), 1u);
  EXPECT_EQ(c.read_byte(r.base + 18), 0);
}

TEST(ClientSpace, WindowOneRefault) {
  Orchestrator orch(testutil::small_config(1));
  ClientSpace c(orch, 1);
  const Region r = c.alloc(2 * kPageSize);
  c.write_byte(r.base, 0x11);
  c.write_byte(r.base + kPageSize, 0x22);
  EXPECT_FALSE(c.is_resident(r.base));
  EXPECT_EQ(c.read_byte(r.base), 0x11);
  EXPECT_EQ(c.faults_raised(), 3u);
}

TEST(ClientSpace, MultiPageAccess) {
  Orchestrator orch(testutil::small_config(2));
  ClientSpace c(orch, 1);
  const Region r = c.alloc(5 * kPageSize);
  std::vector<std::uint8_t> data(3 * kPageSize + 100);
  std::mt19937_64 rng(4);
  for (auto& b : data) b = static_cast<std::uint8_t>(rng());
  c.write(r.base + 50, data);
  std::vector<std::uint8_t> back(data.size());
  c.read(r.base + 50, back);
  EXPECT_EQ(back, data);
  EXPECT_LE(c.resident_pages(), 2u);
}

TEST(ClientSpace, UnmappedAccessIsSegv) {
  Orchestrator orch(testutil::small_config(4));
  ClientSpace c(orch, 1);
  const Region r = c.alloc(kPageSize);
  EXPECT_THROW(c.read_byte(r.base + kPageSize), SegmentationViolation);
  EXPECT_THROW(c.read_byte(0x10), SegmentationViolation);
}

TEST(ClientSpace, FreeScrubsAndUnmaps) {
  std::mt19937_64 rng(5);
  Orchestrator orch(testutil::small_config(2));
  ClientSpace c(orch, 1);
  const Region r = c.alloc(6 * kPageSize);
  const Marker m = testutil::random_marker(rng, "secret", 48);
  for (int i = 0; i < 6; ++i) c.write(r.base + i * kPageSize + 100, m.bytes);
  EXPECT_GT(scan_markers(take_snapshot(orch), {m}).marker_hits.size(), 0u);
  c.free(r);
  EXPECT_EQ(scan_markers(take_snapshot(orch), {m}).marker_hits.size(), 0u);
  EXPECT_EQ(orch.resident_count(c.id()), 0u);
  EXPECT_EQ(orch.store().find(c.id())->size(), 0u);
  EXPECT_THROW(c.read_byte(r.base), SegmentationViolation);
  EXPECT_THROW(c.free(r), ContractViolation);
  EXPECT_NO_THROW(c.free(c.alloc(kPageSize)));
  EXPECT_THROW(c.free(c.stack_region()), ContractViolation);
}

TEST(ClientSpace, ExitDropsEverything) {
  std::mt19937_64 rng(6);
  Orchestrator orch(testutil::small_config(2));
  const Marker m = testutil::random_marker(rng, "x");
  ClientId id;
  {
    ClientSpace c(orch, 1, true);
    id = c.id();
    const Region r = c.alloc(4 * kPageSize);
    for (int i = 0; i < 4; ++i) c.write(r.base + i * kPageSize, m.bytes);
    c.write(kStackBase + 10, m.bytes);
  }
  EXPECT_FALSE(orch.is_registered(id));
  const DumpSnapshot snap = take_snapshot(orch);
  EXPECT_EQ(scan_markers(snap, {m}).marker_hits.size(), 0u);
  EXPECT_EQ(orch.metrics(id).faults, 5u);
}

TEST(ClientSpace, StackProtectionOffMeansNoStackFaults) {
  Orchestrator orch(testutil::small_config(2));
  ClientSpace c(orch, 1, false);
  for (int i = 0; i < 10; ++i) c.write_byte(kStackBase + i * kPageSize, 1);
  EXPECT_EQ(c.stack_faults(), 0u);
  EXPECT_EQ(c.faults_raised(), 0u);
  EXPECT_THROW(c.set_stack_protection(true), ContractViolation);
  // Unprotected stack pages are plaintext outside the window accounting.
  EXPECT_TRUE(take_snapshot(orch).resident_pages().empty());
}

TEST(ClientSpace, StackProtectionOnObeysWindow) {
  Orchestrator orch(testutil::small_config(2));
  ClientSpace c(orch, 1, true);
  for (int i = 0; i < 10; ++i) c.write_byte(kStackBase + i * kPageSize, static_cast<std::uint8_t>(i + 1));
  EXPECT_EQ(c.stack_faults(), 10u);
  EXPECT_EQ(take_snapshot(orch).resident_pages().at(c.id()), 2u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(c.read_byte(kStackBase + i * kPageSize), i + 1);
}

TEST(ClientSpace, StackProtectionDefaultsOn) {
  ::unsetenv("PAGECRYPT_STACK");
  EXPECT_TRUE(default_stack_protection());
  ::setenv("PAGECRYPT_STACK", "0", 1);
  EXPECT_FALSE(default_stack_protection());
  ::unsetenv("PAGECRYPT_STACK");
  Orchestrator orch(testutil::small_config(2));
  ClientSpace c(orch, 1);
  EXPECT_TRUE(c.stack_protection());
}

TEST(ClientSpace, ResidencyAgreesWithWindow) {
  Orchestrator orch(testutil::small_config(3));
  ClientSpace c(orch, 1);
  const Region r = c.alloc(10 * kPageSize);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 2000; ++i) {
    c.write_byte(r.base + (rng() % 10) * kPageSize, 1);
    ASSERT_EQ(c.resident_pages(), orch.resident_count(c.id()));
    for (auto v : orch.window_entries(c.id())) ASSERT_TRUE(c.is_resident(v));
  }
}
