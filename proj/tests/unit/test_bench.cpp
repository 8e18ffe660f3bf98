#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles/fifo_cache.hpp"
#include "pagecrypt/bench.hpp"

using namespace pagecrypt;

namespace {

std::vector<std::uint64_t> page_sequence(const std::vector<TraceEvent>& trace, bool include_stack) {
  std::vector<std::uint64_t> out;
  for (const auto& ev : trace) {
    if (ev.op != TraceOp::read && ev.op != TraceOp::write) continue;
    if (ev.region == kStackHandle && !include_stack) continue;
    const std::uint64_t base = ev.region == kStackHandle ? 1ULL << 40 : 0;
    for (std::uint64_t p = ev.offset / kPageSize; p <= (ev.offset + ev.len - 1) / kPageSize; ++p)
      out.push_back(base + p);
  }
  return out;
}

RunConfig quick(std::size_t window) {
  RunConfig cfg;
  cfg.window = window;
  cfg.workers = 1;
  return cfg;
}

}  // namespace

TEST(Workload, SameSeedSameTrace) {
  const WorkloadSpec spec{WorkloadKind::random, 64, 2000, 9};
  EXPECT_EQ(format_trace(gen_trace(spec)), format_trace(gen_trace(spec)));
  EXPECT_EQ(trace_digest(gen_trace(spec)), trace_digest(gen_trace(spec)));
  WorkloadSpec other = spec;
  other.rng_seed = 10;
  EXPECT_NE(trace_digest(gen_trace(spec)), trace_digest(gen_trace(other)));
}

TEST(Workload, SequentialSinglePassTouchesEachPageOnce) {
  const auto trace = gen_trace({WorkloadKind::sequential, 8, 8, 1});
  const auto pages = page_sequence(trace, false);
  EXPECT_EQ(pages.size(), 8u);
  EXPECT_EQ(std::set<std::uint64_t>(pages.begin(), pages.end()).size(), 8u);
}

TEST(Workload, RandomIsRoughlyUniform) {
  const auto pages = page_sequence(gen_trace({WorkloadKind::random, 64, 64000, 3}), false);
  std::vector<double> counts(64, 0);
  for (auto p : pages) counts[p] += 1;
  const double expect = static_cast<double>(pages.size()) / 64;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 63 degrees of freedom; 0.999 quantile is about 103.
  EXPECT_LT(chi2, 103.0);
}

TEST(Workload, KindNames) {
  for (auto k : {WorkloadKind::random, WorkloadKind::sequential, WorkloadKind::stack_heavy, WorkloadKind::sort_like})
    EXPECT_EQ(parse_kind(kind_name(k)), k);
  EXPECT_THROW(parse_kind("fft"), ParameterError);
  EXPECT_THROW(gen_trace({WorkloadKind::random, 0, 10, 1}), ParameterError);
}

TEST(Run, FaultCountsFollowFifoOracle) {
  const auto trace = gen_trace({WorkloadKind::random, 64, 4000, 5});
  const auto pages = page_sequence(trace, false);
  std::uint64_t prev = 0;
  for (std::size_t w : {32, 16, 8, 4}) {
    const RunResult res = run(quick(w), {trace});
    ASSERT_TRUE(res.clean());
    const auto expect = oracle::simulate_fifo(pages, w);
    EXPECT_EQ(res.aggregate().faults, expect.faults) << w;
    EXPECT_EQ(res.aggregate().evictions, expect.evictions) << w;
    EXPECT_GT(res.aggregate().faults, prev) << w;
    prev = res.aggregate().faults;
  }
}

TEST(Run, SequentialInsensitiveAboveWorkingSet) {
  const auto trace = gen_trace({WorkloadKind::sequential, 8, 800, 1});
  std::set<std::uint64_t> faults;
  for (std::size_t w : {8, 16, 32}) faults.insert(run(quick(w), {trace}).aggregate().faults);
  EXPECT_EQ(faults.size(), 1u);
  EXPECT_EQ(*faults.begin(), 8u);
}

TEST(Run, StackOffMeansNoStackFaults) {
  const auto trace = gen_trace({WorkloadKind::stack_heavy, 16, 2000, 2});
  RunConfig off = quick(4);
  off.stack_protection = false;
  const RunResult a = run(off, {trace});
  ASSERT_TRUE(a.clean());
  EXPECT_EQ(a.clients[0].stack_faults, 0u);
  RunConfig on = quick(4);
  const RunResult b = run(on, {trace});
  EXPECT_GT(b.clients[0].stack_faults, 0u);
}

TEST(Run, SnapshotsAndRepeatsAreClean) {
  const auto trace = gen_trace({WorkloadKind::sort_like, 32, 3000, 4});
  RunConfig cfg = quick(4);
  cfg.snapshot_points = 10;
  cfg.repeats = 3;
  cfg.clients = 2;
  cfg.jitter = true;
  const RunResult res = run(cfg, {trace});
  EXPECT_TRUE(res.clean()) << (res.violations.empty() ? "" : res.violations.front());
  EXPECT_EQ(res.wall_ns.size(), 3u);
  EXPECT_GT(res.snapshots_checked, 0u);
  EXPECT_EQ(res.clients.size(), 2u);
  EXPECT_TRUE(res.clients[0].metrics.same_counters(res.clients[1].metrics));
}

TEST(Run, BaselineProducesRows) {
  const auto trace = gen_trace({WorkloadKind::random, 16, 500, 4});
  RunConfig cfg = quick(4);
  cfg.baseline = true;
  const RunResult res = run(cfg, {trace});
  EXPECT_TRUE(res.clean());
  EXPECT_EQ(res.aggregate().faults, 0u);
}

TEST(Metrics, CsvRoundtripAndReport) {
  const auto trace = gen_trace({WorkloadKind::random, 16, 500, 4});
  const std::string digest = trace_digest(trace);
  RunConfig prot = quick(4);
  prot.clients = 4;
  prot.workload = "random";
  RunConfig base = prot;
  base.baseline = true;
  const RunResult pr = run(prot, {trace});
  const RunResult br = run(base, {trace});

  std::istringstream pin(metrics_csv(prot, pr, digest)), bin(metrics_csv(base, br, digest));
  const MetricsFile pf = parse_metrics_csv(pin), bf = parse_metrics_csv(bin);
  EXPECT_EQ(pf.rows.size(), 5u);
  EXPECT_EQ(pf.rows.back().first, "aggregate");
  EXPECT_TRUE(pf.rows.back().second.same_counters(pr.aggregate()));
  EXPECT_EQ(pf.get("window"), "4");

  const auto rows = build_report({pf, bf});
  EXPECT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows.front().mode, "baseline");
  EXPECT_NEAR(rows.front().slowdown, 1.0, 1e-12);
  EXPECT_GT(rows.back().slowdown, 0.0);
  EXPECT_NE(format_report(rows).find("random protected 4 4 aggregate"), std::string::npos);

  MetricsFile other = pf;
  other.meta["trace_digest"] = "0000000000000000";
  EXPECT_THROW(build_report({pf, other}), ParameterError);
  EXPECT_THROW(build_report({}), ParameterError);

  std::istringstream bad("client,faults\n1,2\n");
  EXPECT_THROW(parse_metrics_csv(bad), ParseError);
}

TEST(Metrics, ReportWithoutBaselineHasNan) {
  const auto trace = gen_trace({WorkloadKind::random, 16, 200, 4});
  RunConfig cfg = quick(4);
  cfg.workload = "random";
  std::istringstream in(metrics_csv(cfg, run(cfg, {trace}), trace_digest(trace)));
  const auto rows = build_report({parse_metrics_csv(in)});
  EXPECT_TRUE(std::isnan(rows.front().slowdown));
  EXPECT_NE(format_report(rows).find("nan"), std::string::npos);
}
