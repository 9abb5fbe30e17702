#include "neonpool/cli.hpp"

#include "neonpool/filters.hpp"
#include "neonpool/pipeline.hpp"
#include "neonpool/replay.hpp"
#include "neonpool/txmodel.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace neonpool {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned parallel = 1;
  bool quiet = false;
};

std::optional<std::uint64_t> resolve_seed(const Globals& g) {
  if (g.seed) return g.seed;
  if (const char* env = std::getenv("NEONPOOL_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used, 0);
      if (used == std::string_view(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("NEONPOOL_SEED is not an unsigned integer: " + std::string(env));
  }
  return std::nullopt;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

ojson manifest(const std::string& command, ojson config, std::optional<std::uint64_t> seed,
               const std::string& started) {
  ojson m;
  m["command"] = command;
  m["config"] = std::move(config);
  if (seed) m["seed"] = *seed;
  else m["seed"] = nullptr;
  m["artifact_version"] = kArtifactVersion;
  m["started"] = started;
  m["finished"] = utc_now();
  return m;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T, typename F>
std::vector<T> parse_list(std::string_view s, const char* what, F parse_one) {
  std::vector<T> out;
  for (const auto& tok : split(s, ',')) {
    if (tok.empty()) throw UsageError(std::string("empty entry in ") + what + " list");
    try {
      out.push_back(parse_one(tok));
    } catch (const std::exception& e) {
      throw UsageError(std::string("invalid ") + what + " '" + tok + "': " + e.what());
    }
  }
  return out;
}

std::uint64_t parse_uint(const std::string& tok) {
  std::size_t used = 0;
  if (tok.empty() || tok[0] == '-') throw std::invalid_argument("not an unsigned integer");
  const auto v = std::stoull(tok, &used);
  if (used != tok.size()) throw std::invalid_argument("not an unsigned integer");
  return v;
}

double parse_real(const std::string& tok) {
  std::size_t used = 0;
  const double v = std::stod(tok, &used);
  if (used != tok.size()) throw std::invalid_argument("not a number");
  return v;
}

// --- dimension -------------------------------------------------------------

struct DimensionArgs {
  std::uint64_t n = 0;
  std::optional<double> target;
  std::optional<std::string> size;
};

int cmd_dimension(const DimensionArgs& a, std::ostream& out) {
  if (a.n == 0) throw UsageError("--n must be at least 1");
  if (a.target.has_value() == a.size.has_value())
    throw UsageError("give exactly one of --target-fpr and --size-bytes");
  FilterParams p;
  try {
    if (a.target) {
      p = dimension_for_target(a.n, *a.target);
    } else {
      const std::uint64_t bytes = parse_size(*a.size);
      if (bytes == 0) throw std::invalid_argument("size must be positive");
      p = dimension_for_size(a.n, bytes * 8);
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ojson j;
  j["n"] = a.n;
  j["m_bits"] = p.m_bits;
  j["k"] = p.k;
  j["p_theory"] = p.p_theory;
  out << j.dump() << '\n';
  return 0;
}

// --- gen-trace -------------------------------------------------------------

struct GenArgs {
  std::string config;
  std::optional<std::string> chain;
  std::optional<std::uint64_t> n_unique;
  std::optional<double> duplicate_factor, mean_inputs, doublespend_rate, replay_rate, invalid_rate,
      orphan_rate, chain_rate, expire_rate, mean_per_hour;
  std::optional<std::uint64_t> block_interval_ms, spam_start_seq, spam_n_txs;
};

TraceGenConfig resolve_trace_config(const GenArgs& a, const Globals& g) {
  json j = json::object();
  if (!a.config.empty()) {
    j = read_json_file(a.config);
    // A run manifest carries the resolved config.
    if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
  }
  if (!j.is_object()) throw UsageError("trace config must be a JSON object");
  auto set = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  set("chain", a.chain);
  set("n_unique", a.n_unique);
  set("duplicate_factor", a.duplicate_factor);
  set("mean_inputs_per_tx", a.mean_inputs);
  set("doublespend_rate", a.doublespend_rate);
  set("replay_rate", a.replay_rate);
  set("invalid_rate", a.invalid_rate);
  set("orphan_rate", a.orphan_rate);
  set("chain_rate", a.chain_rate);
  set("expire_rate", a.expire_rate);
  set("block_interval_ms", a.block_interval_ms);
  if (a.mean_per_hour) j["arrival"]["mean_per_hour"] = *a.mean_per_hour;
  if (a.spam_start_seq || a.spam_n_txs) {
    if (!(a.spam_start_seq && a.spam_n_txs))
      throw UsageError("--spam-start-seq and --spam-n-txs go together");
    j["spam_burst"] = {{"start_seq", *a.spam_start_seq}, {"n_txs", *a.spam_n_txs}};
  }
  if (auto seed = resolve_seed(g)) j["seed"] = *seed;
  try {
    return TraceGenConfig::from_json(j);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int cmd_gen_trace(const GenArgs& a, const Globals& g, std::ostream& err) {
  const std::string started = utc_now();
  if (g.out.empty()) throw UsageError("gen-trace needs --out");
  const TraceGenConfig cfg = resolve_trace_config(a, g);
  const fs::path out_path(g.out);
  {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + g.out);
    TraceWriter writer(out);
    TraceGenerator gen(cfg);
    while (auto ev = gen.next()) writer.write(*ev);
    out.flush();
    if (!out) throw IoError("write failed: " + g.out);
    if (!g.quiet) {
      err << "gen-trace: " << writer.written() << " events, " << gen.created()
          << " unique transactions -> " << g.out << '\n';
    }
  }
  write_file(out_path.string() + ".manifest.json",
             manifest("gen-trace", cfg.to_json(), cfg.seed, started).dump(2) + '\n');
  return 0;
}

// --- replay ----------------------------------------------------------------

struct ReplayArgs {
  std::string trace;
  std::string pipeline;
  std::string sweep;
};

class FileSource final : public EventSource {
 public:
  explicit FileSource(const std::string& path) : in_(path, std::ios::binary), reader_(in_) {
    if (!in_) throw IoError("cannot read trace " + path);
  }
  std::optional<TraceEvent> next() override { return reader_.next(); }

 private:
  std::ifstream in_;
  TraceReader reader_;
};

std::vector<LaneSpec> sweep_lanes(const PipelineConfig& base, const std::string& sweep) {
  std::vector<std::uint64_t> sizes{base.filter.m_bits / 8};
  std::vector<ExpiryPolicy> policies{base.policy};
  std::istringstream words(sweep);
  std::string word;
  while (words >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw UsageError("sweep term '" + word + "' is not key=value");
    const std::string key = word.substr(0, eq);
    const std::string value = word.substr(eq + 1);
    if (key == "sizes") {
      sizes = parse_list<std::uint64_t>(value, "size", [](const std::string& t) { return parse_size(t); });
    } else if (key == "policies") {
      policies = parse_list<ExpiryPolicy>(value, "policy", [](const std::string& t) { return ExpiryPolicy::parse(t); });
    } else {
      throw UsageError("unknown sweep key '" + key + "' (expected sizes or policies)");
    }
  }
  std::vector<LaneSpec> lanes;
  for (const auto& policy : policies) {
    for (std::uint64_t size : sizes) {
      if (size == 0) throw UsageError("sweep sizes must be positive");
      PipelineConfig c = base;
      c.filter.m_bits = size * 8;
      c.filter.k = 0;
      c.policy = policy;
      if (c.filter.kind == FilterSpec::Kind::Decaying) c.filter.kind = FilterSpec::Kind::Standard;
      try {
        c.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      lanes.push_back(LaneSpec{policy.label() + "/" + std::to_string(size), c, false});
    }
  }
  return lanes;
}

int cmd_replay(const ReplayArgs& a, const Globals& g, std::ostream& err) {
  const std::string started = utc_now();
  if (g.out.empty()) throw UsageError("replay needs --out");
  if (!fs::is_regular_file(a.trace)) throw IoError("trace file not found: " + a.trace);
  json pj = read_json_file(a.pipeline);
  if (pj.is_object() && pj.contains("command") && pj.contains("config") && pj["config"].contains("pipeline"))
    pj = pj["config"]["pipeline"];
  PipelineConfig base;
  try {
    base = PipelineConfig::from_json(pj);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (auto seed = resolve_seed(g)) base.seed = *seed;
  if (!base.seed) base.seed = 1;

  const bool sweeping = !a.sweep.empty();
  std::vector<LaneSpec> lanes =
      sweeping ? sweep_lanes(base, a.sweep) : std::vector<LaneSpec>{LaneSpec{"run", base, false}};
  const std::string trace_path = a.trace;
  auto reports = evaluate_lanes_parallel(
      [trace_path] { return std::make_unique<FileSource>(trace_path); }, lanes, g.parallel);

  std::string rows = MetricsReport::csv_header();
  ojson timing = ojson::array();
  ojson report;
  std::string memory;
  if (sweeping) {
    report["lanes"] = ojson::array();
    memory = "lane,ts_ms,filter_bytes,pool_bytes\n";
  }
  for (const auto& r : reports) {
    rows += r.csv_row();
    timing.push_back({{"label", r.label},
                      {"events", r.timing.events},
                      {"mean_ns", r.timing.mean_ns},
                      {"p99_ns", r.timing.p99_ns}});
    if (sweeping) {
      report["lanes"].push_back(r.to_json());
      for (const auto& s : r.memory_series) {
        memory += r.label + ',' + std::to_string(s.ts_ms) + ',' + std::to_string(s.filter_bytes) +
                  ',' + std::to_string(s.reference_pool_bytes) + '\n';
      }
    } else {
      report = r.to_json();
      memory = r.memory_csv();
    }
    if (!g.quiet) {
      err << "replay " << r.label << ": queries=" << r.queries << " fp=" << r.fp << " fn=" << r.fn
          << " fpr=" << r.fpr << " fnr=" << r.fnr << " agreement=" << r.agreement << '\n';
    }
  }

  ojson cfg;
  cfg["trace"] = fs::absolute(a.trace).string();
  cfg["pipeline"] = base.to_json();
  if (sweeping) cfg["sweep"] = a.sweep;
  else cfg["sweep"] = nullptr;

  // Outputs appear only after the whole replay succeeded.
  const fs::path dir(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + g.out + ": " + ec.message());
  write_file(dir / "report.json", report.dump(2) + '\n');
  write_file(dir / "row.csv", rows);
  write_file(dir / "memory.csv", memory);
  write_file(dir / "timing.json", timing.dump(2) + '\n');
  write_file(dir / "manifest.json", manifest("replay", cfg, base.seed, started).dump(2) + '\n');
  return 0;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string sizes = "1m";
  std::string k_list = "7,14,28";
  std::string loads = "0.1,0.5,0.9,1.0";
  std::uint64_t ops = 1'000'000;
  std::uint64_t n_design = 400'000;
  int repeats = 3;
};

int cmd_bench(const BenchArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const std::string started = utc_now();
  if (a.ops == 0) throw UsageError("--ops must be positive");
  if (a.n_design == 0) throw UsageError("--n must be positive");
  if (a.repeats < 1) throw UsageError("--repeats must be at least 1");
  BenchOptions o;
  o.sizes_bytes = parse_list<std::uint64_t>(a.sizes, "size", [](const std::string& t) {
    const auto v = parse_size(t);
    if (v == 0) throw std::invalid_argument("must be positive");
    return v;
  });
  o.k_list = parse_list<std::uint32_t>(a.k_list, "k", [](const std::string& t) {
    const auto v = parse_uint(t);
    if (v == 0 || v > 255) throw std::invalid_argument("k must lie in [1, 255]");
    return static_cast<std::uint32_t>(v);
  });
  o.loads = parse_list<double>(a.loads, "load", [](const std::string& t) {
    const double v = parse_real(t);
    if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("load must lie in (0, 1]");
    return v;
  });
  o.ops = a.ops;
  o.n_design = a.n_design;
  o.repeats = a.repeats;
  if (auto seed = resolve_seed(g)) o.seed = *seed;

  const std::string csv = bench_csv(bench_filter(o));
  if (g.out.empty()) {
    out << csv;
  } else {
    write_file(g.out, csv);
    ojson cfg;
    cfg["sizes"] = o.sizes_bytes;
    cfg["k_list"] = o.k_list;
    cfg["loads"] = o.loads;
    cfg["ops"] = o.ops;
    cfg["n_design"] = o.n_design;
    cfg["repeats"] = o.repeats;
    write_file(g.out + ".manifest.json", manifest("bench", cfg, o.seed, started).dump(2) + '\n');
    if (!g.quiet) err << "bench: wrote " << g.out << '\n';
  }
  return 0;
}

}  // namespace

std::uint64_t parse_size(std::string_view token) {
  std::string t;
  for (char c : token) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t.ends_with("b")) t.pop_back();
  std::uint64_t mult = 1;
  if (!t.empty()) {
    switch (t.back()) {
      case 'k': mult = 1'000; break;
      case 'm': mult = 1'000'000; break;
      case 'g': mult = 1'000'000'000; break;
      default: break;
    }
    if (mult != 1) t.pop_back();
  }
  if (t.empty()) throw std::invalid_argument("empty size '" + std::string(token) + "'");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != t.size() || !(v >= 0.0)) throw std::invalid_argument("bad size '" + std::string(token) + "'");
  const double bytes = v * static_cast<double>(mult);
  if (bytes != std::floor(bytes) || bytes > 1e18) throw std::invalid_argument("bad size '" + std::string(token) + "'");
  return static_cast<std::uint64_t>(bytes);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neonpool bloom-filter transaction pool: dimensioning, traces, replay, bench", "neonpool"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed (falls back to NEONPOOL_SEED)");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--parallel", g.parallel, "Worker threads for sweeps")->check(CLI::Range(1u, 256u));
  app.add_flag("--quiet", g.quiet, "No summary on standard error");

  DimensionArgs dim;
  auto* c_dim = app.add_subcommand("dimension", "Filter size and hash count for a design load");
  c_dim->fallthrough();
  c_dim->add_option("--n", dim.n, "Design set size")->required();
  c_dim->add_option("--target-fpr", dim.target, "Target false-positive rate");
  c_dim->add_option("--size-bytes", dim.size, "Filter size (500k, 1m, ...)");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-trace", "Write a synthetic JSON-lines trace");
  c_gen->fallthrough();
  c_gen->add_option("--config", gen.config, "JSON config or run manifest");
  c_gen->add_option("--chain", gen.chain, "btc or eth");
  c_gen->add_option("--n-unique", gen.n_unique);
  c_gen->add_option("--duplicate-factor", gen.duplicate_factor);
  c_gen->add_option("--mean-inputs", gen.mean_inputs);
  c_gen->add_option("--doublespend-rate", gen.doublespend_rate);
  c_gen->add_option("--replay-rate", gen.replay_rate);
  c_gen->add_option("--invalid-rate", gen.invalid_rate);
  c_gen->add_option("--orphan-rate", gen.orphan_rate);
  c_gen->add_option("--chain-rate", gen.chain_rate);
  c_gen->add_option("--expire-rate", gen.expire_rate);
  c_gen->add_option("--mean-per-hour", gen.mean_per_hour);
  c_gen->add_option("--block-interval-ms", gen.block_interval_ms);
  c_gen->add_option("--spam-start-seq", gen.spam_start_seq);
  c_gen->add_option("--spam-n-txs", gen.spam_n_txs);

  ReplayArgs rep;
  auto* c_rep = app.add_subcommand("replay", "Replay a trace against pipeline and reference pool");
  c_rep->fallthrough();
  c_rep->add_option("--trace", rep.trace)->required();
  c_rep->add_option("--pipeline", rep.pipeline, "Pipeline JSON config")->required();
  c_rep->add_option("--sweep", rep.sweep, "e.g. \"sizes=500k,1m,2m policies=h24,d128\"");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Filter query/insert timing across k and load");
  c_bench->fallthrough();
  c_bench->add_option("--sizes", bench.sizes);
  c_bench->add_option("--k-list", bench.k_list);
  c_bench->add_option("--loads", bench.loads);
  c_bench->add_option("--ops", bench.ops);
  c_bench->add_option("--n", bench.n_design, "Design set size");
  c_bench->add_option("--repeats", bench.repeats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_dim) return cmd_dimension(dim, out);
    if (*c_gen) return cmd_gen_trace(gen, g, err);
    if (*c_rep) return cmd_replay(rep, g, err);
    if (*c_bench) return cmd_bench(bench, g, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace neonpool
