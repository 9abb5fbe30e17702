#include "neonpool/replay.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <thread>

namespace neonpool {

using ojson = nlohmann::ordered_json;

namespace {

std::uint64_t prefix(const TxHash& h) {
  std::uint64_t v = 0;
  std::memcpy(&v, h.data(), sizeof v);
  return v;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Log-scale latency histogram: 8 buckets per power of two.
class LatencyHistogram {
 public:
  void add(std::uint64_t ns) {
    ++count_;
    sum_ += static_cast<double>(ns);
    const double x = std::log2(static_cast<double>(std::max<std::uint64_t>(ns, 1))) * 8.0;
    const auto b = std::min<std::size_t>(static_cast<std::size_t>(x), buckets_.size() - 1);
    ++buckets_[b];
  }
  [[nodiscard]] TimingStats stats() const {
    TimingStats t;
    t.events = count_;
    if (count_ == 0) return t;
    t.mean_ns = sum_ / static_cast<double>(count_);
    const auto target = static_cast<std::uint64_t>(std::ceil(0.99 * static_cast<double>(count_)));
    std::uint64_t acc = 0;
    for (std::size_t b = 0; b < buckets_.size(); ++b) {
      acc += buckets_[b];
      if (acc >= target) {
        t.p99_ns = std::exp2(static_cast<double>(b + 1) / 8.0);
        break;
      }
    }
    return t;
  }

 private:
  std::array<std::uint64_t, 64 * 8> buckets_{};
  std::uint64_t count_ = 0;
  double sum_ = 0.0;
};

using InFlight = std::unordered_map<std::uint64_t, std::uint64_t>;  // txid prefix -> request ts

void prune(InFlight& m, std::uint64_t now, std::uint64_t timeout) {
  std::erase_if(m, [&](const auto& e) { return e.second + timeout < now; });
}

struct Lane {
  const LaneSpec* spec = nullptr;
  std::unique_ptr<NeonpoolBtc> btc;
  std::unique_ptr<NeonpoolEth> eth;
  InFlight in_flight;
  std::unordered_set<std::uint64_t> relayed;
  MetricsReport report;
  LatencyHistogram latency;

  NeonpoolNode& node() { return btc ? static_cast<NeonpoolNode&>(*btc) : *eth; }

  void classify(bool oracle_seen, bool dropped, std::uint64_t seq) {
    ++report.queries;
    if (oracle_seen) {
      ++(dropped ? report.tp : report.fn);
    } else if (dropped) {
      ++report.fp;
      if (spec->record_fp) report.fp_query_seqs.push_back(seq);
    } else {
      ++report.tn;
    }
  }

  void record(const TxHash& txid, IngressDecision d) {
    if (d != IngressDecision::Relay) return;
    ++report.pipeline_relayed;
    if (!relayed.insert(prefix(txid)).second) ++report.redundant;
  }

  void record_released() {
    for (const auto& o : node().released()) record(o.txid, o.decision);
  }
};

class Timer {
 public:
  explicit Timer(bool on) : on_(on) {
    if (on_) start_ = std::chrono::steady_clock::now();
  }
  [[nodiscard]] std::uint64_t elapsed_ns() const {
    if (!on_) return 0;
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                          std::chrono::steady_clock::now() - start_)
                                          .count());
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

std::vector<MetricsReport> evaluate_lanes(EventSource& trace, const std::vector<LaneSpec>& lanes_in,
                                          const EvalOptions& opts) {
  if (lanes_in.empty()) throw std::invalid_argument("evaluate: no pipeline lanes");
  const Chain chain = lanes_in.front().config.chain;
  for (const auto& l : lanes_in) {
    if (l.config.chain != chain) throw std::invalid_argument("evaluate: lanes target different chains");
  }
  if (opts.sample_interval_ms == 0) throw std::invalid_argument("evaluate: sample interval must be positive");

  ChainState state;
  ReferencePool ref(chain, &state, &state, lanes_in.front().config.orphan_capacity,
                    lanes_in.front().config.overhead_factor);
  InFlight ref_in_flight;
  std::unordered_set<std::uint64_t> unique_txs;
  std::unordered_set<std::uint64_t> accepted;

  std::vector<Lane> lanes(lanes_in.size());
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    Lane& l = lanes[i];
    l.spec = &lanes_in[i];
    if (chain == Chain::Btc) {
      l.btc = std::make_unique<NeonpoolBtc>(lanes_in[i].config, &state);
    } else {
      l.eth = std::make_unique<NeonpoolEth>(lanes_in[i].config, &state);
    }
    l.report.label = lanes_in[i].label;
    l.report.config = lanes_in[i].config;
    l.report.config.validate();
  }

  auto note_ref = [&](const TxHash& txid, RefDecision d) {
    if (d == RefDecision::Accepted) accepted.insert(prefix(txid));
  };
  auto note_ref_released = [&] {
    for (const auto& o : ref.released()) note_ref(o.txid, o.decision);
  };

  bool sampling_started = false;
  std::uint64_t next_sample = 0;
  std::uint64_t next_prune = 0;

  while (auto ev = trace.next()) {
    const std::uint64_t ts = ev->ts_ms;
    if (!sampling_started) {
      sampling_started = true;
      next_sample = ts;
      next_prune = ts + 60'000;
    }
    while (ts >= next_sample) {
      for (auto& l : lanes) {
        l.report.memory_series.push_back(MemorySample{next_sample, l.node().filter_bytes(), ref.memory_bytes()});
      }
      next_sample += opts.sample_interval_ms;
    }
    if (ts >= next_prune) {
      prune(ref_in_flight, ts, opts.request_timeout_ms);
      for (auto& l : lanes) prune(l.in_flight, ts, opts.request_timeout_ms);
      next_prune = ts + 60'000;
    }
    for (auto& l : lanes) l.node().apply_policy(ts);

    if (const auto* a = std::get_if<Announce>(&ev->kind)) {
      const auto key = prefix(a->txid);
      const bool seen = ref.seen(a->txid);
      if (!seen) ref_in_flight.emplace(key, ts);
      for (auto& l : lanes) {
        const Timer timer(opts.measure_timing);
        const IngressDecision d = l.btc->on_announce(a->txid);
        l.latency.add(timer.elapsed_ns());
        l.classify(seen, d == IngressDecision::DropDuplicate, ev->seq);
        if (d == IngressDecision::FetchTx) l.in_flight.emplace(key, ts);
      }
    } else if (const auto* tx = std::get_if<BtcTransaction>(&ev->kind)) {
      const auto key = prefix(tx->txid);
      unique_txs.insert(key);
      state.observe(*tx, ts);
      if (ref_in_flight.erase(key) > 0) {
        note_ref(tx->txid, ref.receive(*tx));
        note_ref_released();
      }
      for (auto& l : lanes) {
        if (l.in_flight.erase(key) == 0) continue;
        const Timer timer(opts.measure_timing);
        const IngressDecision d = l.btc->on_tx(*tx);
        l.latency.add(timer.elapsed_ns());
        l.record(tx->txid, d);
        l.record_released();
      }
    } else if (const auto* etx = std::get_if<EthTransaction>(&ev->kind)) {
      unique_txs.insert(prefix(etx->hash));
      state.observe(*etx, ts);
      const bool seen = ref.seen(etx->hash);
      note_ref(etx->hash, ref.receive(*etx));
      for (auto& l : lanes) {
        const Timer timer(opts.measure_timing);
        const IngressDecision d = l.eth->on_tx(*etx);
        l.latency.add(timer.elapsed_ns());
        l.classify(seen, d == IngressDecision::DropDuplicate, ev->seq);
        l.record(etx->hash, d);
      }
    } else if (const auto* b = std::get_if<Block>(&ev->kind)) {
      state.confirm_block(b->txids);
      ref.remove_block(b->txids);
      note_ref_released();
      for (auto& l : lanes) {
        if (!l.btc) continue;
        l.btc->on_block(b->txids);
        l.record_released();
      }
    } else if (const auto* x = std::get_if<EgressExpire>(&ev->kind)) {
      state.forget(x->txid);
      ref.expire(x->txid);
    }
  }

  std::vector<MetricsReport> out;
  out.reserve(lanes.size());
  for (auto& l : lanes) {
    MetricsReport& r = l.report;
    r.fpr = ratio(r.fp, r.queries);
    r.fnr = ratio(r.fn, r.queries);
    r.transactions = unique_txs.size();
    r.oracle_accepted = accepted.size();
    for (auto k : accepted) {
      if (!l.relayed.contains(k)) ++r.rejected_valid;
    }
    for (auto k : l.relayed) {
      if (!accepted.contains(k)) ++r.relayed_invalid;
    }
    r.decisions_agreeing_with_oracle = r.transactions - r.rejected_valid - r.relayed_invalid;
    r.rejection_fraction = ratio(r.rejected_valid, r.oracle_accepted);
    r.agreement = ratio(r.decisions_agreeing_with_oracle, r.transactions);
    r.resets = l.node().resets();
    r.timing = l.latency.stats();
    out.push_back(std::move(r));
  }
  return out;
}

MetricsReport evaluate(EventSource& trace, const PipelineConfig& cfg, const EvalOptions& opts) {
  return std::move(evaluate_lanes(trace, {LaneSpec{"", cfg, false}}, opts).front());
}

std::vector<MetricsReport> evaluate_lanes_parallel(const SourceFactory& make_source,
                                                   const std::vector<LaneSpec>& lanes,
                                                   unsigned threads, const EvalOptions& opts) {
  const std::size_t groups = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(lanes.size(), 1));
  if (groups <= 1) {
    auto src = make_source();
    return evaluate_lanes(*src, lanes, opts);
  }
  std::vector<std::vector<LaneSpec>> split(groups);
  std::vector<std::vector<std::size_t>> index(groups);
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    split[i % groups].push_back(lanes[i]);
    index[i % groups].push_back(i);
  }
  std::vector<std::vector<MetricsReport>> results(groups);
  std::vector<std::exception_ptr> errors(groups);
  std::vector<std::thread> workers;
  for (std::size_t g = 0; g < groups; ++g) {
    workers.emplace_back([&, g] {
      try {
        auto src = make_source();
        results[g] = evaluate_lanes(*src, split[g], opts);
      } catch (...) {
        errors[g] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<MetricsReport> out(lanes.size());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < index[g].size(); ++j) out[index[g][j]] = std::move(results[g][j]);
  }
  return out;
}

std::uint64_t joint_count(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  std::uint64_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

TwoNodeReport two_node_experiment(EventSource& trace, const PipelineConfig& cfg,
                                  std::pair<std::uint64_t, std::uint64_t> seeds,
                                  const EvalOptions& opts) {
  PipelineConfig c1 = cfg;
  PipelineConfig c2 = cfg;
  c1.seed = seeds.first;
  c2.seed = seeds.second;
  auto reports = evaluate_lanes(trace, {LaneSpec{"node1", c1, true}, LaneSpec{"node2", c2, true}}, opts);
  TwoNodeReport r;
  r.queries = reports[0].queries;
  r.fp1 = reports[0].fp;
  r.fp2 = reports[1].fp;
  r.fpr1 = reports[0].fpr;
  r.fpr2 = reports[1].fpr;
  r.joint = joint_count(reports[0].fp_query_seqs, reports[1].fp_query_seqs);
  r.bound = std::max(3.0, 3.0 * r.fpr1 * r.fpr2 * static_cast<double>(r.queries));
  return r;
}

ojson TwoNodeReport::to_json() const {
  ojson j;
  j["queries"] = queries;
  j["fp1"] = fp1;
  j["fp2"] = fp2;
  j["joint"] = joint;
  j["fpr1"] = fpr1;
  j["fpr2"] = fpr2;
  j["bound"] = bound;
  return j;
}

// --- serialization ---------------------------------------------------------

double MetricsReport::peak_memory_ratio() const {
  double best = 0.0;
  for (const auto& s : memory_series) {
    if (s.filter_bytes > 0) best = std::max(best, ratio(s.reference_pool_bytes, s.filter_bytes));
  }
  return best;
}

ojson MetricsReport::to_json(bool include_timing) const {
  ojson j;
  j["label"] = label;
  j["config"] = config.to_json();
  j["queries"] = queries;
  j["tp"] = tp;
  j["tn"] = tn;
  j["fp"] = fp;
  j["fn"] = fn;
  j["fpr"] = fpr;
  j["fnr"] = fnr;
  j["transactions"] = transactions;
  j["oracle_accepted"] = oracle_accepted;
  j["pipeline_relayed"] = pipeline_relayed;
  j["rejected_valid"] = rejected_valid;
  j["relayed_invalid"] = relayed_invalid;
  j["redundant"] = redundant;
  j["decisions_agreeing_with_oracle"] = decisions_agreeing_with_oracle;
  j["rejection_fraction"] = rejection_fraction;
  j["agreement"] = agreement;
  j["resets"] = resets;
  j["peak_memory_ratio"] = peak_memory_ratio();
  auto series = ojson::array();
  for (const auto& s : memory_series) series.push_back({s.ts_ms, s.filter_bytes, s.reference_pool_bytes});
  j["memory_series"] = std::move(series);
  if (include_timing) {
    ojson t;
    t["events"] = timing.events;
    t["mean_ns"] = timing.mean_ns;
    t["p99_ns"] = timing.p99_ns;
    j["timing"] = std::move(t);
  }
  return j;
}

std::string MetricsReport::csv_header() {
  return "policy,size_bytes,k,decay_d,fp,fpr,fn,fnr,rejected,redundant\n";
}

std::string MetricsReport::csv_row() const {
  const FilterParams p = config.filter_params();
  std::string row = config.policy.label();
  row += ',' + std::to_string(config.filter.m_bits / 8);
  row += ',' + std::to_string(p.k);
  row += ',' + std::to_string(config.filter.kind == FilterSpec::Kind::Decaying ? config.filter.decay_d : 0);
  row += ',' + std::to_string(fp);
  row += ',' + fmt_real(fpr);
  row += ',' + std::to_string(fn);
  row += ',' + fmt_real(fnr);
  row += ',' + std::to_string(rejected_valid);
  row += ',' + std::to_string(redundant);
  row += '\n';
  return row;
}

std::string MetricsReport::memory_csv() const {
  std::string out = "ts_ms,filter_bytes,pool_bytes\n";
  for (const auto& s : memory_series) {
    out += std::to_string(s.ts_ms) + ',' + std::to_string(s.filter_bytes) + ',' +
           std::to_string(s.reference_pool_bytes) + '\n';
  }
  return out;
}

}  // namespace neonpool
