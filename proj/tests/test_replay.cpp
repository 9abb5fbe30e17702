#include "neonpool/replay.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <unordered_set>

using namespace neonpool;
using testutil::h;

namespace {

TraceGenConfig small_trace(std::uint64_t n_unique, std::uint64_t seed = 7) {
  TraceGenConfig c = TraceGenConfig::defaults(Chain::Btc);
  c.n_unique = n_unique;
  c.seed = seed;
  return c;
}

std::vector<TraceEvent> collect(TraceGenConfig cfg) {
  TraceGenerator gen(std::move(cfg));
  std::vector<TraceEvent> out;
  while (auto ev = gen.next()) out.push_back(std::move(*ev));
  return out;
}

PipelineConfig lane(ExpiryPolicy policy, std::uint64_t m_bits, std::uint64_t seed = 1) {
  PipelineConfig c;
  c.filter.m_bits = m_bits;
  c.policy = policy;
  c.seed = seed;
  return c;
}

PipelineConfig exact_lane() {
  PipelineConfig c = lane(ExpiryPolicy::none(), 8'000'000);
  c.filter.kind = FilterSpec::Kind::Exact;
  return c;
}

struct TxKeyHash {
  std::size_t operator()(const TxHash& t) const noexcept { return ByteArrayHasher{}(t); }
};

}  // namespace

TEST_CASE("trace config json") {
  TraceGenConfig c = small_trace(123, 9);
  c.spam_burst = SpamBurst{10, 20, 1000};
  const auto back = TraceGenConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  const auto eth = TraceGenConfig::defaults(Chain::Eth);
  CHECK(eth.duplicate_factor == doctest::Approx(1.3));
  CHECK(eth.mean_size_bytes == doctest::Approx(250.0));
  for (const char* bad : {R"({"n_unique":0})", R"({"duplicate_factor":0.5})", R"({"replay_rate":1.5})",
                          R"({"invalid_rate":0.6,"doublespend_rate":0.6})", R"({"chain":"doge"})",
                          R"({"mean_size_bytes":10})", R"([1])"})
    CHECK_THROWS_AS(TraceGenConfig::from_json(nlohmann::json::parse(bad)), std::invalid_argument);
}

TEST_CASE("generator is deterministic per seed") {
  const auto a = collect(small_trace(3'000, 5));
  const auto b = collect(small_trace(3'000, 5));
  const auto c = collect(small_trace(3'000, 6));
  CHECK(a == b);
  CHECK(a != c);
  std::uint64_t prev_seq = 0, prev_ts = 0;
  for (const auto& ev : a) {
    REQUIRE(ev.seq > prev_seq);
    REQUIRE(ev.ts_ms >= prev_ts);
    prev_seq = ev.seq;
    prev_ts = ev.ts_ms;
  }
}

TEST_CASE("duplicate factor sets the announce count") {
  TraceGenConfig cfg = small_trace(10'000, 3);
  cfg.replay_rate = 0.0;
  std::uint64_t announces = 0;
  std::unordered_set<TxHash, TxKeyHash> unique;
  for (const auto& ev : collect(cfg)) {
    if (std::holds_alternative<Announce>(ev.kind)) ++announces;
    if (const auto* tx = std::get_if<BtcTransaction>(&ev.kind)) unique.insert(tx->txid);
  }
  CHECK(unique.size() == 10'000);
  CHECK(announces == doctest::Approx(30'000).epsilon(0.02));
}

TEST_CASE("generated btc trace structure") {
  const auto events = collect(small_trace(30'000, 11));
  std::unordered_set<TxHash, TxKeyHash> known;
  std::unordered_set<TxHash, TxKeyHash> announced;
  std::uint64_t announce_before_tx = 0, full = 0;
  for (const auto& ev : events) {
    if (const auto* b = std::get_if<Block>(&ev.kind)) {
      for (const auto& t : b->txids) known.insert(t);
    } else if (const auto* tx = std::get_if<BtcTransaction>(&ev.kind)) {
      known.insert(tx->txid);
      ++full;
      if (announced.contains(tx->txid)) ++announce_before_tx;
    } else if (const auto* a = std::get_if<Announce>(&ev.kind)) {
      announced.insert(a->txid);
    }
  }
  CHECK(announce_before_tx == full);
  // Inputs only ever point at funding outputs or at transactions somewhere in the trace.
  for (const auto& ev : events) {
    if (const auto* tx = std::get_if<BtcTransaction>(&ev.kind)) {
      for (const auto& in : tx->inputs) REQUIRE(known.contains(in.input_tx_hash));
    }
  }

  // Feeding every full transaction to the reference directly.
  ChainState chain;
  ReferencePool ref(Chain::Btc, &chain, nullptr);
  std::uint64_t ds = 0, invalid = 0, fresh = 0;
  for (const auto& ev : events) {
    if (const auto* tx = std::get_if<BtcTransaction>(&ev.kind)) {
      chain.observe(*tx, ev.ts_ms);
      const RefDecision d = ref.receive(*tx);
      if (d == RefDecision::DropDuplicate) continue;
      ++fresh;
      if (d == RefDecision::DropDoubleSpend) ++ds;
      if (d == RefDecision::DropInvalid) ++invalid;
    } else if (const auto* b = std::get_if<Block>(&ev.kind)) {
      chain.confirm_block(b->txids);
      ref.remove_block(b->txids);
    } else if (const auto* x = std::get_if<EgressExpire>(&ev.kind)) {
      chain.forget(x->txid);
      ref.expire(x->txid);
    }
  }
  const double ds_rate = static_cast<double>(ds) / 30'000.0;
  CHECK(ds_rate > 0.007);
  CHECK(ds_rate < 0.013);
  CHECK(static_cast<double>(invalid) / 30'000.0 < 0.01);
  CHECK(ref.indexes_consistent());
}

TEST_CASE("generated eth trace") {
  TraceGenConfig cfg = TraceGenConfig::defaults(Chain::Eth);
  cfg.n_unique = 10'000;
  cfg.seed = 4;
  std::uint64_t txs = 0;
  std::unordered_set<TxHash, TxKeyHash> unique;
  for (const auto& ev : collect(cfg)) {
    CHECK_FALSE(std::holds_alternative<Announce>(ev.kind));
    if (const auto* tx = std::get_if<EthTransaction>(&ev.kind)) {
      ++txs;
      unique.insert(tx->hash);
    }
  }
  CHECK(unique.size() == 10'000);
  CHECK(static_cast<double>(txs) / 10'000.0 > 1.25);
}

TEST_CASE("exact lane matches the oracle") {
  const auto events = collect(small_trace(20'000, 2));
  testutil::VectorSource src(events);
  const auto r = evaluate(src, exact_lane());
  CHECK(r.queries > 40'000);
  CHECK(r.fp == 0);
  CHECK(r.fn == 0);
  CHECK(r.tp + r.tn == r.queries);
  CHECK(r.rejected_valid == 0);
  CHECK(r.relayed_invalid == 0);
  CHECK(r.agreement == doctest::Approx(1.0));
  CHECK(r.transactions == 20'000);
  CHECK(r.redundant == 0);
  CHECK_FALSE(r.memory_series.empty());
}

TEST_CASE("overloaded filter without expiry") {
  const auto events = collect(small_trace(20'000, 2));
  testutil::VectorSource src(events);
  const auto r = evaluate(src, lane(ExpiryPolicy::none(), 40'000));
  CHECK(r.fpr > 0.05);
  CHECK(r.fn == 0);
  CHECK(r.resets == 0);
  CHECK(r.rejection_fraction > 0.0);
}

TEST_CASE("lanes are independent of grouping") {
  const auto events = collect(small_trace(5'000, 8));
  const std::vector<LaneSpec> lanes{{"a", lane(ExpiryPolicy::hours(1), 20'000)},
                                    {"b", lane(ExpiryPolicy::count(1'000), 30'000)},
                                    {"c", lane(ExpiryPolicy::decay(16), 40'000)}};
  testutil::VectorSource src(events);
  const auto serial = evaluate_lanes(src, lanes);
  const auto parallel = evaluate_lanes_parallel(
      [&] { return std::make_unique<testutil::VectorSource>(events); }, lanes, 2);
  REQUIRE(parallel.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(serial[i].to_json().dump() == parallel[i].to_json().dump());
  testutil::VectorSource one(events);
  auto alone = evaluate(one, lanes[1].config);
  alone.label = "b";
  CHECK(alone.to_json().dump() == serial[1].to_json().dump());
}

TEST_CASE("report formats") {
  const auto events = collect(small_trace(2'000, 8));
  testutil::VectorSource src(events);
  auto r = evaluate(src, lane(ExpiryPolicy::hours(24), 8'000'000));
  CHECK(MetricsReport::csv_header() == "policy,size_bytes,k,decay_d,fp,fpr,fn,fnr,rejected,redundant\n");
  CHECK(r.csv_row().rfind("h24,1000000,", 0) == 0);
  CHECK(r.memory_csv().rfind("ts_ms,filter_bytes,pool_bytes\n", 0) == 0);
  const auto j = r.to_json();
  CHECK(j.begin().key() == "label");
  CHECK_FALSE(j.contains("timing"));
  CHECK(r.to_json(true).contains("timing"));
  CHECK(r.peak_memory_ratio() > 0.0);
}

TEST_CASE("joint false positives") {
  CHECK(joint_count({1, 4, 9, 12}, {2, 4, 12, 13}) == 2);
  CHECK(joint_count({}, {1}) == 0);
  CHECK(joint_count({5}, {5}) == 1);

  const auto events = collect(small_trace(20'000, 12));
  auto run = [&](const PipelineConfig& cfg, std::uint64_t s1, std::uint64_t s2) {
    testutil::VectorSource src(events);
    return two_node_experiment(src, cfg, {s1, s2});
  };
  const PipelineConfig small = lane(ExpiryPolicy::none(), 150'000);
  const auto same = run(small, 3, 3);
  CHECK(same.fp1 > 50);
  CHECK(same.joint == same.fp1);
  CHECK(same.fp2 == same.fp1);
  const auto diff = run(small, 3, 4);
  CHECK(diff.fp1 > 50);
  CHECK(diff.fp2 > 50);
  CHECK(diff.joint < diff.fp1 / 4);
  // Independence predicts fp1 * fp2 / negatives per window, and the fill grows during
  // the run; the flat bound over all queries has no slack for either.
  {
    testutil::VectorSource src(events);
    PipelineConfig c1 = small, c2 = small;
    c1.seed = 3;
    c2.seed = 4;
    const auto reps = evaluate_lanes(src, {{"a", c1, true}, {"b", c2, true}});
    const std::uint64_t last = events.back().seq;
    constexpr int kWindows = 20;
    std::vector<double> q(kWindows), f1(kWindows), f2(kWindows);
    // Only first announces can be false positives.
    std::unordered_set<TxHash, TxKeyHash> announced;
    for (const auto& ev : events) {
      const auto* a = std::get_if<Announce>(&ev.kind);
      if (a && announced.insert(a->txid).second) q[static_cast<std::size_t>(ev.seq * kWindows / (last + 1))] += 1;
    }
    for (auto s : reps[0].fp_query_seqs) f1[static_cast<std::size_t>(s * kWindows / (last + 1))] += 1;
    for (auto s : reps[1].fp_query_seqs) f2[static_cast<std::size_t>(s * kWindows / (last + 1))] += 1;
    double expect = 0.0;
    for (int w = 0; w < kWindows; ++w) {
      if (q[w] > 0) expect += f1[w] * f2[w] / q[w];
    }
    CHECK(joint_count(reps[0].fp_query_seqs, reps[1].fp_query_seqs) == diff.joint);
    CHECK(static_cast<double>(diff.joint) <= expect + 4.0 * std::sqrt(expect) + 3.0);
    CHECK(static_cast<double>(diff.joint) >= expect - 4.0 * std::sqrt(expect));
    MESSAGE("joint " << diff.joint << " windowed expectation " << expect << " flat bound " << diff.bound);
  }
  const auto exact = run(exact_lane(), 1, 2);
  CHECK(exact.joint == 0);
  CHECK(exact.bound == doctest::Approx(3.0));
}

TEST_CASE("bench rows") {
  BenchOptions o;
  o.sizes_bytes = {100'000};
  o.k_list = {2, 28};
  o.loads = {0.5, 0.1};
  o.ops = 100'000;
  o.n_design = 50'000;
  o.repeats = 2;
  const auto rows = bench_filter(o);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].load_fraction == doctest::Approx(0.1));
  CHECK(rows[0].k_ratio == doctest::Approx(1.0));
  CHECK(rows[0].load_ratio == doctest::Approx(1.0));
  CHECK(rows[3].k == 28);
  CHECK(rows[3].m_bits == 800'000);
  CHECK(rows[2].k_ratio > 1.5);  // 14x the probes
  const auto csv = bench_csv(rows);
  CHECK(csv.rfind("k,m_bits,load_fraction,ns_per_query,ns_per_insert,k_ratio,load_ratio\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  BenchOptions bad = o;
  bad.ops = 0;
  CHECK_THROWS_AS(bench_filter(bad), std::invalid_argument);
  bad = o;
  bad.loads = {1.5};
  CHECK_THROWS_AS(bench_filter(bad), std::invalid_argument);
}
