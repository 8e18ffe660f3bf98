// Workload generation, run driver and reporting behind the pagecrypt CLI.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pagecrypt/analyzer.hpp"
#include "pagecrypt/client_runtime.hpp"
#include "pagecrypt/orchestrator.hpp"
#include "pagecrypt/trace.hpp"

namespace pagecrypt {

// ---------------------------------------------------------------------------
// Workloads

enum class WorkloadKind { random, sequential, stack_heavy, sort_like };

inline const char* kind_name(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::random: return "random";
    case WorkloadKind::sequential: return "sequential";
    case WorkloadKind::stack_heavy: return "stack_heavy";
    case WorkloadKind::sort_like: return "sort_like";
  }
  return "?";
}

inline WorkloadKind parse_kind(std::string_view s) {
  if (s == "random") return WorkloadKind::random;
  if (s == "sequential") return WorkloadKind::sequential;
  if (s == "stack_heavy") return WorkloadKind::stack_heavy;
  if (s == "sort_like") return WorkloadKind::sort_like;
  throw ParameterError("unknown workload kind '" + std::string(s) + "'");
}

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::random;
  std::uint64_t working_set = 64;
  std::uint64_t ops = 10000;
  std::uint64_t rng_seed = 1;
};

inline constexpr std::uint64_t kStackPages = kStackSize / kPageSize;
inline constexpr std::size_t kPayloadBytes = 8;

/// Synthetic access patterns:
///   random      uniform page accesses over one large table, like table-driven AES
///   sequential  repeated in-order sweeps over one buffer, like a hash over a file
///   stack_heavy 95% of accesses on stack pages
///   sort_like   array accesses interleaved with a shallow stack, like qsort
/// Index draws use `rng() % n` so traces are identical on every platform.
inline std::vector<TraceEvent> gen_trace(const WorkloadSpec& spec) {
  if (spec.working_set == 0) throw ParameterError("working set must be at least one page");
  std::mt19937_64 rng(spec.rng_seed);
  std::vector<TraceEvent> out;
  out.reserve(spec.ops + 1);

  auto payload = [&] {
    std::vector<std::uint8_t> b(kPayloadBytes);
    const std::uint64_t r = rng();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(r >> (8 * i));
    return b;
  };
  auto access = [&](std::uint32_t region, std::uint64_t page, bool write) {
    TraceEvent ev;
    ev.region = region;
    ev.offset = page * kPageSize + rng() % (kPageSize - kPayloadBytes);
    if (write) {
      ev.op = TraceOp::write;
      ev.bytes = payload();
      ev.len = ev.bytes.size();
    } else {
      ev.op = TraceOp::read;
      ev.len = kPayloadBytes;
    }
    out.push_back(std::move(ev));
  };
  auto alloc = [&](std::uint64_t pages) {
    TraceEvent ev;
    ev.op = TraceOp::alloc;
    ev.region = 0;
    ev.len = pages * kPageSize;
    out.push_back(ev);
  };

  switch (spec.kind) {
    case WorkloadKind::random:
      alloc(spec.working_set);
      for (std::uint64_t i = 0; i < spec.ops; ++i) access(0, rng() % spec.working_set, (rng() & 1) != 0);
      break;
    case WorkloadKind::sequential:
      alloc(spec.working_set);
      for (std::uint64_t i = 0; i < spec.ops; ++i) {
        const std::uint64_t pass = i / spec.working_set;
        access(0, i % spec.working_set, pass == 0);
      }
      break;
    case WorkloadKind::stack_heavy: {
      const std::uint64_t stack_pages = std::min(spec.working_set, kStackPages);
      alloc(1);
      for (std::uint64_t i = 0; i < spec.ops; ++i) {
        if (i % 20 == 0) access(0, 0, (rng() & 1) != 0);
        else access(kStackHandle, rng() % stack_pages, (rng() & 1) != 0);
      }
      break;
    }
    case WorkloadKind::sort_like: {
      alloc(spec.working_set);
      constexpr std::uint64_t kFramePages = 2;
      for (std::uint64_t i = 0; i < spec.ops; ++i) {
        if (i % 2 == 0) access(0, rng() % spec.working_set, (rng() & 1) != 0);
        else access(kStackHandle, rng() % kFramePages, true);
      }
      break;
    }
  }
  return out;
}

inline std::string trace_digest(const std::vector<TraceEvent>& events) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : format_trace(events)) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

// ---------------------------------------------------------------------------
// Runs

struct RunConfig {
  std::size_t window = kDefaultWindow;
  std::size_t workers = 0;
  bool stack_protection = true;
  std::size_t clients = 1;
  std::size_t snapshot_points = 0;
  std::size_t repeats = 1;
  std::uint64_t seed = 1;
  /// Execute against flat unprotected memory, for slowdown baselines.
  bool baseline = false;
  /// Random yields between events, to vary interleavings.
  bool jitter = false;
  std::string workload = "trace";
  /// When set, the run uses this key instead of a fresh one.
  std::optional<MasterKey> key;
  /// Keep a snapshot taken after the last event, before clients exit.
  bool capture_final_snapshot = false;
};

struct ClientResult {
  ClientId id{};
  Metrics metrics;
  std::uint64_t stack_faults = 0;
};

struct RunResult {
  std::vector<ClientResult> clients;
  std::vector<double> wall_ns;
  std::vector<std::string> violations;
  std::size_t snapshots_checked = 0;
  std::optional<DumpSnapshot> final_snapshot;

  Metrics aggregate() const {
    Metrics m;
    for (const auto& c : clients) m += c.metrics;
    return m;
  }
  double wall_mean() const {
    if (wall_ns.empty()) return 0;
    double s = 0;
    for (double w : wall_ns) s += w;
    return s / static_cast<double>(wall_ns.size());
  }
  double wall_stddev() const {
    if (wall_ns.size() < 2) return 0;
    const double mean = wall_mean();
    double s = 0;
    for (double w : wall_ns) s += (w - mean) * (w - mean);
    return std::sqrt(s / static_cast<double>(wall_ns.size() - 1));
  }
  bool clean() const { return violations.empty(); }
};

/// Trace execution against plain memory; the unprotected reference.
class FlatClient {
 public:
  void apply(const TraceEvent& ev) {
    switch (ev.op) {
      case TraceOp::alloc: regions_.emplace_back(page_round_up(ev.len), 0); break;
      case TraceOp::free: regions_.at(ev.region).clear(); break;
      case TraceOp::write: std::copy(ev.bytes.begin(), ev.bytes.end(), mem(ev).begin()); break;
      case TraceOp::read: {
        auto m = mem(ev);
        last_read_.assign(m.begin(), m.end());
        break;
      }
      case TraceOp::stack: break;
    }
  }
  const std::vector<std::uint8_t>& last_read() const { return last_read_; }

 private:
  std::span<std::uint8_t> mem(const TraceEvent& ev) {
    auto& r = ev.region == kStackHandle ? stack_ : regions_.at(ev.region);
    if (ev.offset + ev.len > r.size()) throw SegmentationViolation("access beyond the end of region");
    return std::span<std::uint8_t>(r).subspan(ev.offset, ev.len);
  }
  std::vector<std::vector<std::uint8_t>> regions_;
  std::vector<std::uint8_t> stack_ = std::vector<std::uint8_t>(kStackSize, 0);
  std::vector<std::uint8_t> last_read_;
};

namespace detail {

/// Checks run at every snapshot point.
inline void check_snapshot(const Orchestrator& orch, const MasterKey& key, std::size_t window,
                           const std::vector<ClientSpace*>& spaces, std::uint64_t at,
                           std::vector<std::string>& violations) {
  const DumpSnapshot snap = take_snapshot(orch, at);
  const std::string where = " at event " + std::to_string(at);
  for (const auto& [client, pages] : snap.resident_pages())
    if (pages > window)
      violations.push_back("client " + to_string(client) + " has " + std::to_string(pages) + " plaintext pages" + where);
  if (snap.mid_transfer_buffers() != 0) violations.push_back("transfer buffer not zero" + where);
  if (scan_key(snap, key)) violations.push_back("master key found in dump" + where);
  for (ClientSpace* s : spaces) {
    if (!orch.is_registered(s->id())) continue;
    const Metrics m = orch.metrics(s->id());
    if (!m.identities_hold()) violations.push_back("metrics identities broken for " + to_string(s->id()) + where);
    if (orch.resident_count(s->id()) != s->resident_pages())
      violations.push_back("window and client residency disagree for " + to_string(s->id()) + where);
  }
}

}  // namespace detail

inline RunResult run_once(const RunConfig& cfg, const std::vector<std::vector<TraceEvent>>& traces,
                          std::uint64_t repeat_index) {
  if (traces.empty()) throw ParameterError("at least one trace is required");
  if (cfg.clients == 0) throw ParameterError("client count must be positive");
  RunResult result;
  std::vector<std::string> violations;
  std::mutex violations_mu;
  auto violation = [&](std::string msg) {
    std::lock_guard lock(violations_mu);
    violations.push_back(std::move(msg));
  };

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + repeat_index);
  std::uint64_t total_events = 0;
  for (std::size_t i = 0; i < cfg.clients; ++i) total_events += traces[i % traces.size()].size();

  if (cfg.baseline) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < cfg.clients; ++i) {
      threads.emplace_back([&, i] {
        FlatClient flat;
        try {
          for (const auto& ev : traces[i % traces.size()]) flat.apply(ev);
        } catch (const std::exception& e) {
          violation("baseline client " + std::to_string(i) + ": " + e.what());
        }
      });
    }
    for (auto& t : threads) t.join();
    result.wall_ns.push_back(static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count()));
    for (std::size_t i = 0; i < cfg.clients; ++i)
      result.clients.push_back({ClientId{static_cast<std::uint32_t>(1000 + i), 0}, {}, 0});
    result.violations = std::move(violations);
    return result;
  }

  std::set<std::uint64_t> points;
  for (std::size_t i = 0; i < cfg.snapshot_points && total_events > 0; ++i) points.insert(rng() % total_events + 1);

  MasterKey retained;
  KeySource keysource = [&](std::span<std::uint8_t, kKeySize> out) {
    if (cfg.key) std::copy(cfg.key->bytes().begin(), cfg.key->bytes().end(), out.begin());
    else MasterKey::fill_from_os(out);
    retained = MasterKey(std::span<const std::uint8_t, kKeySize>(out));
  };

  OrchestratorConfig oc;
  oc.window = cfg.window;
  oc.workers = cfg.workers;
  Orchestrator orch(oc, keysource);

  std::vector<std::unique_ptr<ClientSpace>> spaces;
  std::vector<ClientSpace*> raw;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    spaces.push_back(std::make_unique<ClientSpace>(orch, static_cast<std::uint32_t>(1000 + i), cfg.stack_protection));
    raw.push_back(spaces.back().get());
  }

  std::shared_mutex quiesce;
  std::atomic<std::uint64_t> done_events{0};
  std::atomic<std::size_t> checked{0};
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    threads.emplace_back([&, i] {
      ClientSpace& space = *spaces[i];
      TraceReplayer replayer(space);
      std::mt19937 jitter_rng(static_cast<std::uint32_t>(cfg.seed + i));
      const auto& trace = traces[i % traces.size()];
      for (std::size_t k = 0; k < trace.size(); ++k) {
        bool failed = false;
        {
          std::shared_lock lock(quiesce);
          try {
            replayer.apply(trace[k]);
          } catch (const std::exception& e) {
            violation("client " + to_string(space.id()) + " event " + std::to_string(k) + ": " + e.what());
            failed = true;
          }
        }
        const std::uint64_t n = done_events.fetch_add(1) + 1;
        if (points.contains(n)) {
          std::unique_lock lock(quiesce);
          std::vector<std::string> local;
          detail::check_snapshot(orch, retained, cfg.window, raw, n, local);
          for (auto& v : local) violation(std::move(v));
          ++checked;
        }
        if (failed) {
          done_events.fetch_add(trace.size() - k - 1);
          break;
        }
        if (cfg.jitter && jitter_rng() % 4 == 0) std::this_thread::yield();
      }
    });
  }
  for (auto& t : threads) t.join();
  result.wall_ns.push_back(static_cast<double>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count()));
  result.snapshots_checked = checked.load();
  if (cfg.capture_final_snapshot) result.final_snapshot = take_snapshot(orch, total_events);

  for (auto& s : spaces) {
    const Metrics m = orch.metrics(s->id());
    if (!m.identities_hold()) violation("metrics identities broken for " + to_string(s->id()));
    result.clients.push_back({s->id(), m, s->stack_faults()});
  }
  spaces.clear();
  {
    const DumpSnapshot snap = take_snapshot(orch, total_events);
    if (scan_key(snap, retained)) violation("master key found in dump after client exit");
    for (const auto& r : snap.records)
      if (!r.is_zero() && r.tag != RegionTag::channel_internal) {
        violation(std::string("non-zero ") + tag_name(r.tag) + " frame after all clients exited");
        break;
      }
  }
  result.violations = std::move(violations);
  return result;
}

/// Runs `cfg.repeats` times. Counters must agree across repeats; wall times
/// are collected per repeat.
inline RunResult run(const RunConfig& cfg, const std::vector<std::vector<TraceEvent>>& traces) {
  if (cfg.repeats == 0) throw ParameterError("repeat count must be positive");
  RunResult total;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    RunResult one = run_once(cfg, traces, r);
    if (r > 0) {
      for (std::size_t i = 0; i < one.clients.size(); ++i)
        if (!one.clients[i].metrics.same_counters(total.clients[i].metrics))
          one.violations.push_back("counters differ between repeats for client " + to_string(one.clients[i].id));
    }
    total.wall_ns.push_back(one.wall_ns.front());
    total.snapshots_checked += one.snapshots_checked;
    for (auto& v : one.violations) total.violations.push_back("repeat " + std::to_string(r) + ": " + v);
    total.clients = std::move(one.clients);
    if (one.final_snapshot) total.final_snapshot = std::move(one.final_snapshot);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Metrics files

inline constexpr const char* kMetricsHeader =
    "client,faults,first_touch,evictions,encrypts,decrypts,fault_ns_total,crypto_ns_total";

struct MetricsFile {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Metrics>> rows;  // per client, then "aggregate"

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

inline std::string format_metrics_row(const std::string& label, const Metrics& m) {
  std::ostringstream out;
  out << label << ',' << m.faults << ',' << m.first_touch_faults << ',' << m.evictions << ',' << m.encrypt_ops << ','
      << m.decrypt_ops << ',' << m.fault_ns_total << ',' << m.crypto_ns_total;
  return out.str();
}

/// Metrics CSV. Run parameters travel as leading `# key=value` lines.
inline std::string metrics_csv(const RunConfig& cfg, const RunResult& res, const std::string& digest) {
  std::ostringstream out;
  out << "# mode=" << (cfg.baseline ? "baseline" : "protected") << '\n'
      << "# workload=" << cfg.workload << '\n'
      << "# trace_digest=" << digest << '\n'
      << "# window=" << (cfg.baseline ? 0 : cfg.window) << '\n'
      << "# workers=" << cfg.workers << '\n'
      << "# clients=" << cfg.clients << '\n'
      << "# stack=" << (cfg.stack_protection ? "on" : "off") << '\n'
      << "# repeats=" << res.wall_ns.size() << '\n'
      << std::fixed << std::setprecision(0) << "# wall_ns_mean=" << res.wall_mean() << '\n'
      << "# wall_ns_stddev=" << res.wall_stddev() << '\n';
  out << kMetricsHeader << '\n';
  for (const auto& c : res.clients) out << format_metrics_row(to_string(c.id), c.metrics) << '\n';
  out << format_metrics_row("aggregate", res.aggregate()) << '\n';
  return out.str();
}

inline MetricsFile parse_metrics_csv(std::istream& in) {
  MetricsFile f;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.starts_with('#')) {
      auto eq = line.find('=');
      if (eq != std::string::npos) {
        std::string key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        f.meta[key] = line.substr(eq + 1);
      }
      continue;
    }
    if (!header) {
      if (line != kMetricsHeader) throw ParseError("metrics line " + std::to_string(line_no) + ": unexpected header");
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ParseError("metrics line " + std::to_string(line_no) + ": expected 8 columns");
    Metrics m;
    std::uint64_t* fields[] = {&m.faults, &m.first_touch_faults, &m.evictions, &m.encrypt_ops,
                               &m.decrypt_ops, &m.fault_ns_total, &m.crypto_ns_total};
    for (std::size_t i = 0; i < 7; ++i) *fields[i] = detail::parse_u64(cells[i + 1], line_no);
    f.rows.emplace_back(cells[0], m);
  }
  if (!header) throw ParseError("metrics file has no header");
  return f;
}

// ---------------------------------------------------------------------------
// Trend report

struct ReportRow {
  std::string workload;
  std::string mode;
  std::size_t window = 0;
  std::size_t clients = 0;
  std::string client;
  Metrics metrics;
  double wall_ms = 0;
  double slowdown = 0;  // NaN without a matching baseline
};

/// One row per client plus the aggregate row of every file. Slowdown is the
/// file's mean wall time over that of the baseline file with the same
/// workload and client count. Files naming the same workload must share the
/// trace digest.
inline std::vector<ReportRow> build_report(const std::vector<MetricsFile>& files) {
  if (files.empty()) throw ParameterError("report needs at least one metrics file");
  std::map<std::string, std::string> digests;
  std::map<std::pair<std::string, std::size_t>, double> baseline_wall;
  for (const auto& f : files) {
    const std::string w = f.get("workload", "trace");
    const std::string d = f.get("trace_digest");
    auto [it, fresh] = digests.emplace(w, d);
    if (!fresh && it->second != d) throw ParameterError("mismatched configs: workload '" + w + "' has different traces");
    if (f.get("mode") == "baseline") {
      const std::size_t clients = std::stoul(f.get("clients", "1"));
      const double wall = std::stod(f.get("wall_ns_mean", "0"));
      auto [bit, bfresh] = baseline_wall.emplace(std::make_pair(w, clients), wall);
      if (!bfresh && bit->second != wall)
        throw ParameterError("mismatched configs: two baselines for workload '" + w + "'");
    }
  }

  std::vector<ReportRow> rows;
  for (const auto& f : files) {
    ReportRow base;
    base.workload = f.get("workload", "trace");
    base.mode = f.get("mode", "protected");
    base.window = std::stoul(f.get("window", "0"));
    base.clients = std::stoul(f.get("clients", "1"));
    const double wall = std::stod(f.get("wall_ns_mean", "0"));
    base.wall_ms = wall / 1e6;
    auto b = baseline_wall.find({base.workload, base.clients});
    base.slowdown = (b == baseline_wall.end() || b->second <= 0) ? std::nan("") : wall / b->second;
    for (const auto& [label, m] : f.rows) {
      ReportRow r = base;
      r.client = label;
      r.metrics = m;
      rows.push_back(r);
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.workload != b.workload) return a.workload < b.workload;
    if (a.clients != b.clients) return a.clients < b.clients;
    if (a.mode != b.mode) return a.mode == "baseline";
    return a.window > b.window;
  });
  return rows;
}

/// Whitespace-separated columns with a '#' header, readable by gnuplot.
inline std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "# workload mode window clients client faults first_touch evictions encrypts decrypts wall_ms slowdown\n";
  for (const auto& r : rows) {
    out << r.workload << ' ' << r.mode << ' ' << r.window << ' ' << r.clients << ' ' << r.client << ' '
        << r.metrics.faults << ' ' << r.metrics.first_touch_faults << ' ' << r.metrics.evictions << ' '
        << r.metrics.encrypt_ops << ' ' << r.metrics.decrypt_ops << ' ' << std::fixed << std::setprecision(3)
        << r.wall_ms << ' ';
    if (std::isnan(r.slowdown)) out << "nan";
    else out << std::setprecision(3) << r.slowdown;
    out << '\n';
  }
  return out.str();
}

}  // namespace pagecrypt
