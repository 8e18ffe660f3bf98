#include <random>

#include <gtest/gtest.h>

#include "oracles/helpers.hpp"
#include "pagecrypt/analyzer.hpp"
#include "pagecrypt/transport.hpp"

using namespace pagecrypt;

namespace {

ControlMsg random_msg(std::mt19937_64& rng) {
  ControlMsg m;
  m.type = static_cast<MsgType>(1 + rng() % 9);
  m.client = {static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng())};
  m.vaddr = rng();
  m.len = static_cast<std::uint32_t>(rng());
  return m;
}

}  // namespace

TEST(Codec, FaultRoundtrip) {
  const ControlMsg m{MsgType::FAULT, {7, 0}, 0x1000, 4096};
  const WireMsg w = encode_msg(m);
  EXPECT_EQ(w.size(), 21u);
  EXPECT_EQ(w[0], 5);
  EXPECT_EQ(decode_msg(w), m);
  EXPECT_EQ(encode_msg(m), encode_msg(ControlMsg(m)));
}

TEST(Codec, LittleEndianLayout) {
  const WireMsg w = encode_msg({MsgType::RESOLVE, {0x04030201, 0x08070605}, 0x100f0e0d0c0b0a09ULL, 0x14131211});
  EXPECT_EQ(w[0], 6);
  for (int i = 1; i < 21; ++i) EXPECT_EQ(w[i], i) << i;
}

TEST(Codec, RandomRoundtrip) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100000; ++i) {
    const ControlMsg m = random_msg(rng);
    ASSERT_EQ(decode_msg(encode_msg(m)), m);
  }
}

TEST(Codec, RejectsMalformed) {
  const WireMsg w = encode_msg({MsgType::FAULT, {7, 0}, 0x1000, 4096});
  EXPECT_THROW(decode_msg(std::span<const std::uint8_t>(w.data(), 20)), ProtocolError);
  std::vector<std::uint8_t> longer(w.begin(), w.end());
  longer.push_back(0);
  EXPECT_THROW(decode_msg(longer), ProtocolError);
  EXPECT_THROW(decode_msg({}), ProtocolError);
  for (int tag : {0, 10, 0x7f, 0xff}) {
    WireMsg bad = w;
    bad[0] = static_cast<std::uint8_t>(tag);
    EXPECT_THROW(decode_msg(bad), ProtocolError) << tag;
  }
}

TEST(TransferBuffer, OutThenInLeavesZero) {
  PhysicalMemory ram;
  TransferBuffer buf(ram, {1, 0});
  std::mt19937_64 rng(2);
  const PageBuf page = testutil::random_page(rng);
  EXPECT_TRUE(buf.is_zero());
  buf.transfer_out(page);
  EXPECT_TRUE(buf.active());
  EXPECT_THROW(buf.transfer_out(page), ProtocolError);
  EXPECT_EQ(buf.transfer_in(), page);
  EXPECT_TRUE(buf.is_zero());
  EXPECT_FALSE(buf.active());
  EXPECT_THROW(buf.transfer_in(), ProtocolError);
  EXPECT_EQ(testutil::frames_containing(ram, std::span<const std::uint8_t>(page.bytes.data(), 64)), 0u);
}

TEST(TransferBuffer, CancelScrubs) {
  PhysicalMemory ram;
  TransferBuffer buf(ram, {1, 0});
  PageBuf page;
  page.bytes.fill(0x5a);
  buf.transfer_out(page);
  buf.cancel();
  EXPECT_TRUE(buf.is_zero());
  EXPECT_NO_THROW(buf.transfer_out(page));
}

TEST(ControlChannel, CarriesOnlyEncodedMessages) {
  PhysicalMemory ram;
  ControlChannel ch(ram, {3, 1});
  for (int i = 0; i < 500; ++i) ch.send({MsgType::FAULT, {3, 1}, std::uint64_t(i) * kPageSize, 0});
  EXPECT_EQ(ch.messages(), 500u);
  EXPECT_EQ(ch.last().vaddr, 499u * kPageSize);
  std::size_t frames = 0;
  ram.for_each_frame([&](FrameId, const FrameInfo& info, const PageBuf&) {
    if (info.in_use) {
      ++frames;
      EXPECT_EQ(info.tag, RegionTag::channel_internal);
    }
  });
  EXPECT_EQ(frames, 1u);
}
