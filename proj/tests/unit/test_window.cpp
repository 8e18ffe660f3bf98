#include <random>

#include <gtest/gtest.h>

#include "oracles/fifo_cache.hpp"
#include "pagecrypt/window.hpp"

using namespace pagecrypt;

TEST(Window, CapacityFourEvictsOldest) {
  SlidingWindow w(4);
  for (std::uint64_t p : {0xa000, 0xb000, 0xc000, 0xd000}) EXPECT_FALSE(w.admit(p));
  EXPECT_EQ(w.next_victim(), 0xa000u);
  EXPECT_EQ(w.admit(0xe000), 0xa000u);
  EXPECT_FALSE(w.resident(0xa000));
  EXPECT_TRUE(w.resident(0xe000));
}

TEST(Window, CapacityOne) {
  SlidingWindow w(1);
  EXPECT_FALSE(w.admit(0x1000));
  EXPECT_EQ(w.admit(0x2000), 0x1000u);
}

TEST(Window, CapacityThreeFaultSequence) {
  SlidingWindow w(3);
  std::vector<std::uint64_t> evicted;
  int faults = 0;
  for (std::uint64_t p : {1, 2, 3, 4, 1}) {
    const std::uint64_t a = p * kPageSize;
    if (w.resident(a)) continue;
    ++faults;
    if (auto e = w.admit(a)) evicted.push_back(*e);
  }
  EXPECT_EQ(faults, 5);
  EXPECT_EQ(evicted, (std::vector<std::uint64_t>{1 * kPageSize, 2 * kPageSize}));
}

TEST(Window, DuplicateAdmitAndRemove) {
  SlidingWindow w(2);
  w.admit(0x1000);
  EXPECT_THROW(w.admit(0x1000), ContractViolation);
  EXPECT_FALSE(w.remove(0x2000));
  EXPECT_TRUE(w.remove(0x1000));
  EXPECT_EQ(w.size(), 0u);
  EXPECT_NO_THROW(w.admit(0x1000));
  EXPECT_FALSE(SlidingWindow(3).resident(0x1000));
}

TEST(Window, CapacityBounds) {
  EXPECT_THROW(SlidingWindow(0), ParameterError);
  EXPECT_THROW(SlidingWindow(kMaxWindow + 1), ParameterError);
  EXPECT_NO_THROW(SlidingWindow{kMaxWindow});
  EXPECT_EQ(SlidingWindow().capacity(), 16u);
}

TEST(Window, MatchesBruteForceFifoWithRemovals) {
  std::mt19937_64 rng(5);
  for (std::size_t cap : {1, 2, 3, 8, 16, 33}) {
    SlidingWindow w(cap);
    oracle::FifoCache ref(cap);
    for (int i = 0; i < 20000; ++i) {
      const std::uint64_t page = (rng() % 64) * kPageSize;
      if (rng() % 10 == 0) {
        const bool had = w.resident(page);
        ref.forget(page);
        ASSERT_EQ(w.remove(page), had);
      } else if (!w.resident(page)) {
        const auto before = ref.evictions();
        ASSERT_TRUE(ref.access(page));
        auto e = w.admit(page);
        ASSERT_EQ(e.has_value(), ref.evictions() != before);
        if (e) {
          ASSERT_EQ(*e, ref.last_evicted());
        }
      } else {
        ASSERT_FALSE(ref.access(page));
      }
      ASSERT_LE(w.size(), cap);
      ASSERT_EQ(std::vector<std::uint64_t>(w.entries().begin(), w.entries().end()), ref.slots());
    }
  }
}
