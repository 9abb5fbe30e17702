#pragma once

#include "neonpool/filters.hpp"
#include "neonpool/groundtruth.hpp"
#include "neonpool/pipeline.hpp"
#include "neonpool/txmodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace neonpool {

// --- trace generation ------------------------------------------------------

struct ArrivalModel {
  double mean_per_hour = 36'000.0;  // unique transactions, outside bursts
  double burst_multiplier = 2.0;
  double burst_probability = 0.1;   // per window
  std::uint64_t burst_window_ms = 600'000;
};

struct SpamBurst {
  std::uint64_t start_seq = 0;
  std::uint64_t n_txs = 0;
  std::uint64_t duration_ms = 60'000;
};

struct TraceGenConfig {
  Chain chain = Chain::Btc;
  std::uint64_t n_unique = 1'000'000;
  double duplicate_factor = 3.0;
  double mean_inputs_per_tx = 2.0;
  double doublespend_rate = 0.01;
  double replay_rate = 0.03;
  double invalid_rate = 0.002;
  double orphan_rate = 0.005;
  double chain_rate = 0.1;
  double expire_rate = 0.05;
  ArrivalModel arrival;
  std::uint64_t block_interval_ms = 600'000;
  std::uint64_t mean_confirm_ms = 4ULL * 3'600'000;
  std::uint64_t max_confirm_ms = 20ULL * 3'600'000;
  std::uint64_t expire_after_ms = 12ULL * 3'600'000;
  std::uint64_t replay_min_age_ms = 6ULL * 3'600'000;
  std::uint64_t doublespend_max_delay_ms = 60'000;
  double mean_size_bytes = 400.0;
  std::uint64_t n_accounts = 0;  // eth; 0: max(1000, n_unique / 10)
  std::uint64_t start_ts_ms = 1'700'000'000'000ULL;
  std::optional<SpamBurst> spam_burst;
  std::uint64_t seed = 1;

  // Chain-specific defaults (eth: duplicate factor 1.3, 250-byte transactions).
  static TraceGenConfig defaults(Chain chain);
  void validate() const;
  static TraceGenConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

// Streaming discrete-event generator. Memory stays bounded by the in-flight horizon
// (pending confirmations, duplicate deliveries), not by trace length.
class TraceGenerator final : public EventSource {
 public:
  explicit TraceGenerator(TraceGenConfig cfg);
  ~TraceGenerator() override;
  std::optional<TraceEvent> next() override;

  [[nodiscard]] std::uint64_t created() const noexcept { return created_; }
  [[nodiscard]] const TraceGenConfig& config() const noexcept { return cfg_; }

 private:
  struct GenTx;
  using TxPtr = std::shared_ptr<GenTx>;
  enum class Emit : std::uint8_t { Announce, FullTx, Expire };
  struct Scheduled {
    std::uint64_t ts;
    std::uint64_t order;
    Emit what;
    TxPtr tx;
    bool operator>(const Scheduled& o) const {
      return ts != o.ts ? ts > o.ts : order > o.order;
    }
  };
  struct PendingConfirm {
    std::uint64_t due;
    std::uint64_t id;
    TxPtr tx;
    bool operator>(const PendingConfirm& o) const { return due != o.due ? due > o.due : id > o.id; }
  };
  struct Account {
    Address address{};
    std::uint64_t next_nonce = 0;
    std::uint64_t last_good_id = 0;
    bool has_last_good = false;
  };

  double uniform();
  double exponential(double mean);
  std::uint64_t poisson(double mean);
  std::uint32_t tx_size();
  std::uint64_t extra_delay();
  TxHash random_hash();
  void schedule(std::uint64_t ts, Emit what, const TxPtr& tx);
  void schedule_deliveries(const TxPtr& tx, std::uint64_t t);
  void assign_fate(const TxPtr& tx, std::uint64_t t);
  void remember(const TxPtr& tx, std::uint64_t t);
  void advance_creation_clock();
  void create_one();
  TxPtr make_btc(std::uint64_t t, bool force_good);
  TxPtr make_eth(std::uint64_t t);
  void create_orphan_pair(std::uint64_t t);
  void maybe_replay(std::uint64_t t);
  std::optional<TraceEvent> emit_block();
  TraceEvent emit_scheduled(const Scheduled& s);
  TraceEvent stamp(std::uint64_t ts, EventKind kind);
  BtcInput funding_input();
  TxPtr pick_recent_victim(std::uint64_t t);
  Account fresh_account();

  TraceGenConfig cfg_;
  std::mt19937_64 rng_;
  std::uint64_t seq_ = 0;
  std::uint64_t order_ = 0;
  std::uint64_t created_ = 0;
  double create_clock_ = 0.0;
  std::uint64_t next_block_ts_ = 0;
  bool genesis_done_ = false;
  bool in_burst_ = false;
  std::uint64_t window_end_ = 0;
  bool spam_started_ = false;
  std::uint64_t spam_left_ = 0;
  double spam_gap_ms_ = 0.0;
  std::uint64_t good_count_ = 0;

  std::priority_queue<Scheduled, std::vector<Scheduled>, std::greater<>> heap_;
  std::priority_queue<PendingConfirm, std::vector<PendingConfirm>, std::greater<>> confirm_queue_;
  std::vector<PendingConfirm> deferred_;
  std::unordered_set<std::uint64_t> unconfirmed_;  // ids with a confirm fate not yet in a block

  std::vector<TxHash> funding_;
  std::vector<std::uint32_t> funding_next_;
  std::deque<TxPtr> parent_ring_;
  std::deque<TxPtr> recent_;   // double-spend victims
  std::deque<TxPtr> history_;  // replay candidates (sampled)
  std::vector<Account> accounts_;
  std::uint64_t account_serial_ = 0;
};

// --- evaluation --------------------------------------------------------------

struct MemorySample {
  std::uint64_t ts_ms = 0;
  std::uint64_t filter_bytes = 0;
  std::uint64_t reference_pool_bytes = 0;
};

struct TimingStats {
  std::uint64_t events = 0;
  double mean_ns = 0.0;
  double p99_ns = 0.0;
};

struct MetricsReport {
  std::string label;
  PipelineConfig config;
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::uint64_t queries = 0;
  double fpr = 0.0, fnr = 0.0;
  // Per-transaction verdicts: relayed at least once by the pipeline vs accepted by the oracle.
  std::uint64_t transactions = 0;
  std::uint64_t oracle_accepted = 0;
  std::uint64_t pipeline_relayed = 0;
  std::uint64_t rejected_valid = 0;  // accepted by the oracle, never relayed
  std::uint64_t relayed_invalid = 0; // relayed, never accepted by the oracle
  std::uint64_t redundant = 0;       // relays of an already relayed txid
  std::uint64_t decisions_agreeing_with_oracle = 0;
  double rejection_fraction = 0.0;
  double agreement = 0.0;
  std::uint64_t resets = 0;
  std::vector<MemorySample> memory_series;
  TimingStats timing;
  std::vector<std::uint64_t> fp_query_seqs;  // only when requested

  [[nodiscard]] double peak_memory_ratio() const;  // max reference_pool_bytes / filter_bytes

  // Timing is excluded unless asked for, so reports compare byte for byte across runs.
  [[nodiscard]] nlohmann::ordered_json to_json(bool include_timing = false) const;
  [[nodiscard]] static std::string csv_header();
  [[nodiscard]] std::string csv_row() const;
  [[nodiscard]] std::string memory_csv() const;
};

struct LaneSpec {
  std::string label;
  PipelineConfig config;
  bool record_fp = false;
};

struct EvalOptions {
  std::uint64_t sample_interval_ms = 60'000;
  bool measure_timing = true;
  // In-flight fetch requests older than this are abandoned.
  std::uint64_t request_timeout_ms = 600'000;
};

// Runs every lane and one reference pool in lockstep over a single pass of `trace`.
// All lanes must target the same chain; the reference takes orphan capacity and
// overhead factor from the first lane.
std::vector<MetricsReport> evaluate_lanes(EventSource& trace, const std::vector<LaneSpec>& lanes,
                                          const EvalOptions& opts = {});
MetricsReport evaluate(EventSource& trace, const PipelineConfig& cfg, const EvalOptions& opts = {});

// Splits the lanes over `threads` workers; each worker replays its own source.
using SourceFactory = std::function<std::unique_ptr<EventSource>()>;
std::vector<MetricsReport> evaluate_lanes_parallel(const SourceFactory& make_source,
                                                   const std::vector<LaneSpec>& lanes,
                                                   unsigned threads, const EvalOptions& opts = {});

struct TwoNodeReport {
  std::uint64_t queries = 0;
  std::uint64_t fp1 = 0, fp2 = 0;
  std::uint64_t joint = 0;
  double fpr1 = 0.0, fpr2 = 0.0;
  double bound = 0.0;  // max(3, 3 * fpr1 * fpr2 * queries)
  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

TwoNodeReport two_node_experiment(EventSource& trace, const PipelineConfig& cfg,
                                  std::pair<std::uint64_t, std::uint64_t> seeds,
                                  const EvalOptions& opts = {});
[[nodiscard]] std::uint64_t joint_count(const std::vector<std::uint64_t>& a,
                                        const std::vector<std::uint64_t>& b);

// --- benchmark -------------------------------------------------------------

struct BenchOptions {
  std::vector<std::uint64_t> sizes_bytes{1'000'000};
  std::vector<std::uint32_t> k_list{7, 14, 28};
  std::vector<double> loads{0.1, 0.5, 0.9, 1.0};
  std::uint64_t ops = 1'000'000;
  std::uint64_t n_design = 400'000;
  std::uint64_t seed = 1;
  int repeats = 3;
};

struct BenchRow {
  std::uint32_t k = 0;
  std::uint64_t m_bits = 0;
  double load_fraction = 0.0;
  double ns_per_query = 0.0;
  double ns_per_insert = 0.0;
  double k_ratio = 1.0;     // (query+insert) against the previous k at the same load
  double load_ratio = 1.0;  // (query+insert) against the first load for the same k
};

std::vector<BenchRow> bench_filter(const BenchOptions& opts);
[[nodiscard]] std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace neonpool
