// pagecrypt: generate workloads, run them under page encryption, analyze
// memory dumps and summarize metrics.
//
//   pagecrypt gen --kind K --pages P --ops O --seed S -o trace.txt
//   pagecrypt run --window W --workers N --clients C --stack on|off --repeat K
//                 --trace FILE... --snapshot-points P --metrics OUT.csv
//   pagecrypt analyze --snapshot S.bin --markers M.hex --key-file K.hex
//   pagecrypt report FILE...
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>

#include "pagecrypt/pagecrypt.hpp"

namespace {

using namespace pagecrypt;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

MasterKey read_key_file(const std::string& path) {
  std::string text = read_file(path);
  std::erase_if(text, [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
  auto bytes = from_hex(text);
  secure_zero(text.data(), text.size());
  if (!bytes || bytes->size() != kKeySize) throw ParameterError("key file must hold 64 hex digits");
  MasterKey key(std::span<const std::uint8_t, kKeySize>(bytes->data(), kKeySize));
  secure_zero(bytes->data(), bytes->size());
  return key;
}

std::vector<Marker> read_markers(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<Marker> markers;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0].starts_with('#')) continue;
    auto bytes = from_hex(tok[0]);
    if (!bytes) throw ParseError("markers line " + std::to_string(n) + ": bad hex");
    markers.push_back({tok.size() > 1 ? std::string(tok[1]) : "m" + std::to_string(markers.size()), std::move(*bytes)});
  }
  return markers;
}

int cmd_gen(const std::string& kind, std::uint64_t pages, std::uint64_t ops, std::uint64_t seed,
            const std::string& out) {
  WorkloadSpec spec{parse_kind(kind), pages, ops, seed};
  const std::string text = format_trace(gen_trace(spec));
  if (out.empty() || out == "-") std::cout << text;
  else write_file(out, text);
  return 0;
}

struct RunArgs {
  std::size_t window = kDefaultWindow;
  std::size_t workers = 0;
  std::size_t clients = 1;
  std::string stack;
  std::size_t repeat = 10;
  std::vector<std::string> traces;
  std::size_t snapshot_points = 0;
  std::string metrics;
  bool baseline = false;
  bool jitter = false;
  std::uint64_t seed = 1;
  std::string workload;
  std::string key_file;
  std::string snapshot_out;
};

int cmd_run(const RunArgs& a) {
  RunConfig cfg;
  cfg.window = a.window;
  cfg.workers = a.workers;
  cfg.clients = a.clients;
  cfg.stack_protection = a.stack.empty() ? default_stack_protection() : a.stack == "on";
  cfg.snapshot_points = a.snapshot_points;
  cfg.repeats = a.repeat;
  cfg.seed = a.seed;
  cfg.baseline = a.baseline;
  cfg.jitter = a.jitter;
  cfg.capture_final_snapshot = !a.snapshot_out.empty();
  if (!a.key_file.empty()) cfg.key = read_key_file(a.key_file);

  std::vector<std::vector<TraceEvent>> traces;
  std::string label;
  for (const auto& path : a.traces) {
    traces.push_back(parse_trace(read_file(path)));
    if (!label.empty()) label += '+';
    label += std::filesystem::path(path).stem().string();
  }
  cfg.workload = a.workload.empty() ? label : a.workload;

  std::string all;
  for (const auto& t : traces) all += format_trace(t);
  const std::string digest = trace_digest(parse_trace(all));

  const RunResult res = run(cfg, traces);
  const std::string csv = metrics_csv(cfg, res, digest);
  if (a.metrics.empty() || a.metrics == "-") std::cout << csv;
  else write_file(a.metrics, csv);

  if (res.final_snapshot) {
    const auto bytes = res.final_snapshot->serialize();
    write_file(a.snapshot_out, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }

  std::cerr << "runs: " << res.wall_ns.size() << ", snapshots checked: " << res.snapshots_checked
            << ", mean wall: " << res.wall_mean() / 1e6 << " ms (stddev " << res.wall_stddev() / 1e6 << ")\n";
  for (const auto& v : res.violations) std::cerr << "invariant violation: " << v << '\n';
  return res.clean() ? 0 : 1;
}

int cmd_analyze(const std::string& snapshot, const std::string& markers_path, const std::string& key_file,
                const std::string& csv_out, std::size_t window, std::size_t clients) {
  const std::string raw = read_file(snapshot);
  const DumpSnapshot snap = DumpSnapshot::deserialize(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  const auto markers = markers_path.empty() ? std::vector<Marker>{} : read_markers(markers_path);
  ExposureReport report = scan_markers(snap, markers);
  if (!key_file.empty()) report.key_found = scan_key(snap, read_key_file(key_file));
  std::cout << "snapshot: " << snap.records.size() << " regions, " << snap.total_bytes() << " bytes\n"
            << report.to_text();
  if (!csv_out.empty()) write_file(csv_out, report.to_csv());

  bool ok = !report.key_found;
  if (window > 0) {
    const std::uint64_t bound = (clients * window + report.mid_transfer_buffers) * kPageSize;
    const bool within = report.plaintext_bytes_found <= bound;
    std::cout << "exposure bound " << bound << " bytes: " << (within ? "respected" : "EXCEEDED") << '\n';
    ok = ok && within;
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& files) {
  std::vector<MetricsFile> parsed;
  for (const auto& f : files) {
    std::istringstream in(read_file(f));
    parsed.push_back(parse_metrics_csv(in));
  }
  std::cout << format_report(build_report(parsed));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pagecrypt: page-granular memory encryption simulator"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic workload trace");
  std::string kind = "random", out;
  std::uint64_t pages = 64, ops = 10000, seed = 1;
  gen->add_option("--kind", kind, "random | sequential | stack_heavy | sort_like")->capture_default_str();
  gen->add_option("--pages", pages, "Working set in pages")->capture_default_str();
  gen->add_option("--ops", ops, "Number of accesses")->capture_default_str();
  gen->add_option("--seed", seed, "RNG seed")->capture_default_str();
  gen->add_option("-o,--output", out, "Output file (default stdout)");

  auto* runc = app.add_subcommand("run", "Replay traces under page encryption");
  RunArgs ra;
  runc->add_option("--window", ra.window, "Sliding window size in pages")->capture_default_str();
  runc->add_option("--workers", ra.workers, "Crypto workers (0 = hardware parallelism)")->capture_default_str();
  runc->add_option("--clients", ra.clients, "Concurrent client instances")->capture_default_str();
  runc->add_option("--stack", ra.stack, "Stack protection on|off (default from PAGECRYPT_STACK)")
      ->check(CLI::IsMember({"on", "off"}));
  runc->add_option("--repeat", ra.repeat, "Repetitions")->capture_default_str();
  runc->add_option("--trace", ra.traces, "Trace files; client i replays trace i mod count")->required();
  runc->add_option("--snapshot-points", ra.snapshot_points, "Random event boundaries to check")->capture_default_str();
  runc->add_option("--metrics", ra.metrics, "Metrics CSV output (default stdout)");
  runc->add_flag("--baseline", ra.baseline, "Run against unprotected memory");
  runc->add_flag("--jitter", ra.jitter, "Randomize client interleaving");
  runc->add_option("--seed", ra.seed, "Seed for snapshot points and jitter")->capture_default_str();
  runc->add_option("--workload", ra.workload, "Workload label (default: trace file names)");
  runc->add_option("--key-file", ra.key_file, "Use this key (64 hex digits) instead of a fresh one");
  runc->add_option("--snapshot-out", ra.snapshot_out, "Write a dump taken after the last event");

  auto* analyze = app.add_subcommand("analyze", "Scan a memory dump for markers and key material");
  std::string snapshot, markers, key_file, csv_out;
  std::size_t window = 0, clients = 1;
  analyze->add_option("--snapshot", snapshot, "Snapshot file")->required();
  analyze->add_option("--markers", markers, "Marker file, one hex pattern (>= 32 bytes) per line");
  analyze->add_option("--key-file", key_file, "Key to look for (64 hex digits)");
  analyze->add_option("--csv", csv_out, "Write marker hits as CSV");
  analyze->add_option("--window", window, "Check the exposure bound for this window size");
  analyze->add_option("--clients", clients, "Client count for the exposure bound")->capture_default_str();

  auto* report = app.add_subcommand("report", "Trend table from metrics files");
  std::vector<std::string> files;
  report->add_option("files", files, "Metrics CSV files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(kind, pages, ops, seed, out);
    if (*runc) return cmd_run(ra);
    if (*analyze) return cmd_analyze(snapshot, markers, key_file, csv_out, window, clients);
    if (*report) return cmd_report(files);
  } catch (const pagecrypt::Error& e) {
    std::cerr << "pagecrypt: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
