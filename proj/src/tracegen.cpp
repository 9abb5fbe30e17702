#include "neonpool/replay.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace neonpool {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kFundingTxs = 64;
constexpr std::size_t kParentRing = 20;
constexpr std::uint64_t kHistoryStride = 16;
constexpr std::uint64_t kHistoryHorizonMs = 48ULL * 3'600'000;
constexpr double kSizeSigma = 0.6;
constexpr double kTailFraction = 0.01;
constexpr double kTailMaxMs = 30.0 * 60'000;
constexpr double kDupMeanDelayMs = 2'000.0;

}  // namespace

// --- config ----------------------------------------------------------------

TraceGenConfig TraceGenConfig::defaults(Chain chain) {
  TraceGenConfig c;
  c.chain = chain;
  if (chain == Chain::Eth) {
    c.duplicate_factor = 1.3;
    c.mean_size_bytes = 250.0;
    c.orphan_rate = 0.0;
    c.chain_rate = 0.0;
  }
  return c;
}

void TraceGenConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
  };
  if (n_unique == 0) throw std::invalid_argument("n_unique must be at least 1");
  if (!(duplicate_factor >= 1.0)) throw std::invalid_argument("duplicate_factor must be >= 1");
  if (!(mean_inputs_per_tx >= 1.0)) throw std::invalid_argument("mean_inputs_per_tx must be >= 1");
  rate(doublespend_rate, "doublespend_rate");
  rate(replay_rate, "replay_rate");
  rate(invalid_rate, "invalid_rate");
  rate(orphan_rate, "orphan_rate");
  rate(chain_rate, "chain_rate");
  rate(expire_rate, "expire_rate");
  rate(arrival.burst_probability, "arrival.burst_probability");
  if (invalid_rate + doublespend_rate > 1.0)
    throw std::invalid_argument("invalid_rate + doublespend_rate must not exceed 1");
  if (!(arrival.mean_per_hour > 0.0)) throw std::invalid_argument("arrival.mean_per_hour must be positive");
  if (!(arrival.burst_multiplier > 0.0)) throw std::invalid_argument("arrival.burst_multiplier must be positive");
  if (arrival.burst_window_ms == 0) throw std::invalid_argument("arrival.burst_window_ms must be positive");
  if (block_interval_ms == 0) throw std::invalid_argument("block_interval_ms must be positive");
  if (mean_confirm_ms == 0 || max_confirm_ms == 0)
    throw std::invalid_argument("confirmation delays must be positive");
  if (!(mean_size_bytes >= (chain == Chain::Btc ? 60.0 : 100.0)))
    throw std::invalid_argument("mean_size_bytes below the minimum transaction size");
  if (spam_burst && spam_burst->n_txs == 0) throw std::invalid_argument("spam_burst.n_txs must be positive");
}

namespace {

template <typename T>
void read_opt(const json& j, const char* name, T& out) {
  if (auto it = j.find(name); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

TraceGenConfig TraceGenConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("trace config must be a JSON object");
  Chain chain = Chain::Btc;
  try {
    if (auto it = j.find("chain"); it != j.end()) chain = chain_from_string(it->get<std::string>());
    TraceGenConfig c = defaults(chain);
    read_opt(j, "n_unique", c.n_unique);
    read_opt(j, "duplicate_factor", c.duplicate_factor);
    read_opt(j, "mean_inputs_per_tx", c.mean_inputs_per_tx);
    read_opt(j, "doublespend_rate", c.doublespend_rate);
    read_opt(j, "replay_rate", c.replay_rate);
    read_opt(j, "invalid_rate", c.invalid_rate);
    read_opt(j, "orphan_rate", c.orphan_rate);
    read_opt(j, "chain_rate", c.chain_rate);
    read_opt(j, "expire_rate", c.expire_rate);
    if (auto it = j.find("arrival"); it != j.end() && it->is_object()) {
      read_opt(*it, "mean_per_hour", c.arrival.mean_per_hour);
      read_opt(*it, "burst_multiplier", c.arrival.burst_multiplier);
      read_opt(*it, "burst_probability", c.arrival.burst_probability);
      read_opt(*it, "burst_window_ms", c.arrival.burst_window_ms);
    }
    read_opt(j, "block_interval_ms", c.block_interval_ms);
    read_opt(j, "mean_confirm_ms", c.mean_confirm_ms);
    read_opt(j, "max_confirm_ms", c.max_confirm_ms);
    read_opt(j, "expire_after_ms", c.expire_after_ms);
    read_opt(j, "replay_min_age_ms", c.replay_min_age_ms);
    read_opt(j, "doublespend_max_delay_ms", c.doublespend_max_delay_ms);
    read_opt(j, "mean_size_bytes", c.mean_size_bytes);
    read_opt(j, "n_accounts", c.n_accounts);
    read_opt(j, "start_ts_ms", c.start_ts_ms);
    if (auto it = j.find("spam_burst"); it != j.end() && it->is_object()) {
      SpamBurst b;
      read_opt(*it, "start_seq", b.start_seq);
      read_opt(*it, "n_txs", b.n_txs);
      read_opt(*it, "duration_ms", b.duration_ms);
      c.spam_burst = b;
    }
    read_opt(j, "seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("trace config: ") + e.what());
  }
}

ojson TraceGenConfig::to_json() const {
  ojson j;
  j["chain"] = std::string(to_string(chain));
  j["n_unique"] = n_unique;
  j["duplicate_factor"] = duplicate_factor;
  j["mean_inputs_per_tx"] = mean_inputs_per_tx;
  j["doublespend_rate"] = doublespend_rate;
  j["replay_rate"] = replay_rate;
  j["invalid_rate"] = invalid_rate;
  j["orphan_rate"] = orphan_rate;
  j["chain_rate"] = chain_rate;
  j["expire_rate"] = expire_rate;
  ojson a;
  a["mean_per_hour"] = arrival.mean_per_hour;
  a["burst_multiplier"] = arrival.burst_multiplier;
  a["burst_probability"] = arrival.burst_probability;
  a["burst_window_ms"] = arrival.burst_window_ms;
  j["arrival"] = std::move(a);
  j["block_interval_ms"] = block_interval_ms;
  j["mean_confirm_ms"] = mean_confirm_ms;
  j["max_confirm_ms"] = max_confirm_ms;
  j["expire_after_ms"] = expire_after_ms;
  j["replay_min_age_ms"] = replay_min_age_ms;
  j["doublespend_max_delay_ms"] = doublespend_max_delay_ms;
  j["mean_size_bytes"] = mean_size_bytes;
  j["n_accounts"] = n_accounts;
  j["start_ts_ms"] = start_ts_ms;
  if (spam_burst) {
    ojson b;
    b["start_seq"] = spam_burst->start_seq;
    b["n_txs"] = spam_burst->n_txs;
    b["duration_ms"] = spam_burst->duration_ms;
    j["spam_burst"] = std::move(b);
  } else {
    j["spam_burst"] = nullptr;
  }
  j["seed"] = seed;
  return j;
}

// --- generator -------------------------------------------------------------

struct TraceGenerator::GenTx {
  std::uint64_t id = 0;
  std::uint64_t created_ms = 0;
  BtcTransaction btc;
  EthTransaction eth;
  std::uint32_t next_output = 0;
  std::vector<std::uint64_t> parents;
  bool good = false;
  bool expire_fate = false;
  bool emitted = false;      // full transaction already in the trace
  bool ds_eligible = false;  // may be the first-seen side of a double spend
  const TxHash& hash(Chain c) const { return c == Chain::Btc ? btc.txid : eth.hash; }
};

TraceGenerator::TraceGenerator(TraceGenConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  if (cfg_.n_accounts == 0) cfg_.n_accounts = std::max<std::uint64_t>(1000, cfg_.n_unique / 10);
  create_clock_ = static_cast<double>(cfg_.start_ts_ms);
  next_block_ts_ = cfg_.start_ts_ms + cfg_.block_interval_ms;
  window_end_ = cfg_.start_ts_ms + cfg_.arrival.burst_window_ms;
  in_burst_ = uniform() < cfg_.arrival.burst_probability;
  if (cfg_.chain == Chain::Btc) {
    for (std::size_t i = 0; i < kFundingTxs; ++i) funding_.push_back(random_hash());
    funding_next_.assign(kFundingTxs, 0);
  } else {
    accounts_.reserve(cfg_.n_accounts);
    for (std::uint64_t i = 0; i < cfg_.n_accounts; ++i) accounts_.push_back(fresh_account());
  }
}

TraceGenerator::~TraceGenerator() = default;

double TraceGenerator::uniform() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double TraceGenerator::exponential(double mean) { return -std::log1p(-uniform()) * mean; }

std::uint64_t TraceGenerator::poisson(double mean) {
  if (mean <= 0.0) return 0;
  const double limit = std::exp(-mean);
  std::uint64_t k = 0;
  double p = uniform();
  while (p > limit) {
    ++k;
    p *= uniform();
  }
  return k;
}

std::uint32_t TraceGenerator::tx_size() {
  // Box-Muller; log-normal with the configured mean.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  const double mu = std::log(cfg_.mean_size_bytes) - kSizeSigma * kSizeSigma / 2.0;
  const double floor = cfg_.chain == Chain::Btc ? 60.0 : 100.0;
  const double v = std::max(floor, std::exp(mu + kSizeSigma * z));
  return static_cast<std::uint32_t>(std::min(v, 4.0e6));
}

std::uint64_t TraceGenerator::extra_delay() {
  if (uniform() < kTailFraction) return static_cast<std::uint64_t>(uniform() * kTailMaxMs);
  return static_cast<std::uint64_t>(exponential(kDupMeanDelayMs));
}

TxHash TraceGenerator::random_hash() {
  TxHash h{};
  for (int w = 0; w < 4; ++w) {
    const std::uint64_t v = rng_();
    for (int i = 0; i < 8; ++i) h[8 * w + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  return h;
}

TraceGenerator::Account TraceGenerator::fresh_account() {
  SplitMix64 mix(cfg_.seed ^ (0x5EED5EED00000000ULL + account_serial_++ * 0x9E3779B97F4A7C15ULL));
  Account a;
  for (int w = 0; w < 3; ++w) {
    const std::uint64_t v = mix.next();
    for (int i = 0; i < 8 && 8 * w + i < 20; ++i) a.address[8 * w + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  return a;
}

BtcInput TraceGenerator::funding_input() {
  const auto j = static_cast<std::size_t>(rng_() % kFundingTxs);
  return BtcInput{funding_[j], funding_next_[j]++};
}

void TraceGenerator::schedule(std::uint64_t ts, Emit what, const TxPtr& tx) {
  heap_.push(Scheduled{ts, order_++, what, tx});
}

void TraceGenerator::schedule_deliveries(const TxPtr& tx, std::uint64_t t) {
  const double df = cfg_.duplicate_factor;
  const double whole = std::floor(df);
  std::uint64_t copies = static_cast<std::uint64_t>(whole) + (uniform() < df - whole ? 1 : 0);
  copies = std::max<std::uint64_t>(copies, 1);
  if (cfg_.chain == Chain::Btc) {
    const auto fetch = static_cast<std::uint64_t>(20.0 + uniform() * 180.0);
    schedule(t, Emit::Announce, tx);
    schedule(t + fetch, Emit::FullTx, tx);
    for (std::uint64_t i = 1; i < copies; ++i) schedule(t + fetch + extra_delay(), Emit::Announce, tx);
  } else {
    schedule(t, Emit::FullTx, tx);
    for (std::uint64_t i = 1; i < copies; ++i) schedule(t + extra_delay(), Emit::FullTx, tx);
  }
}

void TraceGenerator::assign_fate(const TxPtr& tx, std::uint64_t t) {
  if (!tx->good) return;
  if (tx->expire_fate) {
    schedule(t + cfg_.expire_after_ms, Emit::Expire, tx);
    return;
  }
  const double delay = std::min(exponential(static_cast<double>(cfg_.mean_confirm_ms)),
                                static_cast<double>(cfg_.max_confirm_ms));
  confirm_queue_.push(PendingConfirm{t + static_cast<std::uint64_t>(delay), tx->id, tx});
  unconfirmed_.insert(tx->id);
}

void TraceGenerator::remember(const TxPtr& tx, std::uint64_t t) {
  if (!tx->good) return;
  if (cfg_.chain == Chain::Btc) {
    parent_ring_.push_back(tx);
    if (parent_ring_.size() > kParentRing) parent_ring_.pop_front();
  }
  if (tx->ds_eligible) recent_.push_back(tx);
  while (!recent_.empty() && recent_.front()->created_ms + cfg_.doublespend_max_delay_ms < t)
    recent_.pop_front();
  if (good_count_++ % kHistoryStride == 0) history_.push_back(tx);
  while (!history_.empty() && history_.front()->created_ms + kHistoryHorizonMs < t)
    history_.pop_front();
}

TraceGenerator::TxPtr TraceGenerator::pick_recent_victim(std::uint64_t t) {
  if (recent_.empty()) return nullptr;
  for (int attempt = 0; attempt < 8; ++attempt) {
    const TxPtr& v = recent_[static_cast<std::size_t>(rng_() % recent_.size())];
    if (v->emitted && v->created_ms + 1000 <= t) return v;
  }
  return nullptr;
}

TraceGenerator::TxPtr TraceGenerator::make_btc(std::uint64_t t, bool force_good) {
  auto tx = std::make_shared<GenTx>();
  tx->id = created_++;
  tx->created_ms = t;
  tx->btc.txid = random_hash();
  tx->btc.raw_size_bytes = tx_size();
  const std::uint64_t n_in = 1 + poisson(cfg_.mean_inputs_per_tx - 1.0);

  const double u = force_good ? 1.0 : uniform();
  if (u < cfg_.invalid_rate) {
    tx->btc.valid = false;
    for (std::uint64_t i = 0; i < n_in; ++i) tx->btc.inputs.push_back(funding_input());
    return tx;
  }
  if (u < cfg_.invalid_rate + cfg_.doublespend_rate) {
    if (TxPtr victim = pick_recent_victim(t)) {
      const auto& vin = victim->btc.inputs;
      tx->btc.inputs.push_back(vin[static_cast<std::size_t>(rng_() % vin.size())]);
      for (std::uint64_t i = 1; i < n_in; ++i) tx->btc.inputs.push_back(funding_input());
      return tx;
    }
  }
  tx->good = true;
  tx->ds_eligible = true;
  for (std::uint64_t i = 0; i < n_in; ++i) {
    if (!parent_ring_.empty() && uniform() < cfg_.chain_rate) {
      const TxPtr& p = parent_ring_[static_cast<std::size_t>(rng_() % parent_ring_.size())];
      tx->btc.inputs.push_back(BtcInput{p->btc.txid, p->next_output++});
      tx->parents.push_back(p->id);
      if (p->expire_fate) tx->expire_fate = true;
      if (!p->emitted) tx->ds_eligible = false;
    } else {
      tx->btc.inputs.push_back(funding_input());
    }
  }
  if (!tx->expire_fate) tx->expire_fate = uniform() < cfg_.expire_rate;
  return tx;
}

TraceGenerator::TxPtr TraceGenerator::make_eth(std::uint64_t t) {
  auto tx = std::make_shared<GenTx>();
  tx->id = created_++;
  tx->created_ms = t;
  tx->eth.hash = random_hash();
  tx->eth.raw_size_bytes = tx_size();
  tx->eth.amount = static_cast<Wei>(rng_() % 1'000'000'000'000ULL) * 1'000'000ULL;

  const double u = uniform();
  const auto slot = static_cast<std::size_t>(rng_() % accounts_.size());
  Account& acct = accounts_[slot];
  tx->eth.sender = acct.address;
  if (u < cfg_.invalid_rate) {
    tx->eth.nonce = acct.next_nonce;
    tx->eth.valid = false;
    return tx;
  }
  if (u < cfg_.invalid_rate + cfg_.doublespend_rate) {
    if (TxPtr victim = pick_recent_victim(t)) {
      tx->eth.sender = victim->eth.sender;
      tx->eth.nonce = victim->eth.nonce;
      return tx;
    }
  }
  tx->good = true;
  tx->ds_eligible = true;
  tx->eth.nonce = acct.next_nonce++;
  if (acct.has_last_good && unconfirmed_.contains(acct.last_good_id))
    tx->parents.push_back(acct.last_good_id);
  acct.last_good_id = tx->id;
  acct.has_last_good = true;
  // An account whose transaction is dropped unconfirmed leaves a nonce gap; retire it.
  if (uniform() < cfg_.expire_rate) {
    tx->expire_fate = true;
    acct = fresh_account();
  }
  return tx;
}

void TraceGenerator::create_orphan_pair(std::uint64_t t) {
  TxPtr parent = make_btc(t, true);
  auto child = std::make_shared<GenTx>();
  child->id = created_++;
  child->created_ms = t;
  child->btc.txid = random_hash();
  child->btc.raw_size_bytes = tx_size();
  child->btc.inputs.push_back(BtcInput{parent->btc.txid, parent->next_output++});
  const std::uint64_t extra = poisson(cfg_.mean_inputs_per_tx - 1.0);
  for (std::uint64_t i = 0; i < extra; ++i) child->btc.inputs.push_back(funding_input());
  child->parents.push_back(parent->id);
  child->good = true;
  child->expire_fate = parent->expire_fate || uniform() < cfg_.expire_rate;

  const auto lag = static_cast<std::uint64_t>(1000.0 + uniform() * 4000.0);
  schedule_deliveries(child, t);
  schedule_deliveries(parent, t + lag);
  assign_fate(parent, t + lag);
  assign_fate(child, t);
  remember(parent, t);
  remember(child, t);
}

void TraceGenerator::maybe_replay(std::uint64_t t) {
  if (history_.empty() || uniform() >= cfg_.replay_rate) return;
  const auto old_end = std::partition_point(history_.begin(), history_.end(), [&](const TxPtr& p) {
    return p->created_ms + cfg_.replay_min_age_ms <= t;
  });
  const auto n = static_cast<std::size_t>(old_end - history_.begin());
  if (n == 0) return;
  const TxPtr& victim = history_[static_cast<std::size_t>(rng_() % n)];
  if (cfg_.chain == Chain::Btc) {
    schedule(t, Emit::Announce, victim);
    schedule(t + static_cast<std::uint64_t>(20.0 + uniform() * 180.0), Emit::FullTx, victim);
  } else {
    schedule(t, Emit::FullTx, victim);
  }
}

void TraceGenerator::advance_creation_clock() {
  if (cfg_.spam_burst && !spam_started_ && seq_ >= cfg_.spam_burst->start_seq) {
    spam_started_ = true;
    spam_left_ = cfg_.spam_burst->n_txs;
    spam_gap_ms_ = static_cast<double>(cfg_.spam_burst->duration_ms) / static_cast<double>(spam_left_);
  }
  if (spam_left_ > 0) {
    create_clock_ += spam_gap_ms_;
    return;
  }
  const double rate = cfg_.arrival.mean_per_hour * (in_burst_ ? cfg_.arrival.burst_multiplier : 1.0);
  create_clock_ += exponential(3'600'000.0 / rate);
  while (create_clock_ >= static_cast<double>(window_end_)) {
    window_end_ += cfg_.arrival.burst_window_ms;
    in_burst_ = uniform() < cfg_.arrival.burst_probability;
  }
}

void TraceGenerator::create_one() {
  const auto t = static_cast<std::uint64_t>(create_clock_);
  const bool spam = spam_left_ > 0;
  if (spam) --spam_left_;
  if (cfg_.chain == Chain::Btc && !spam && created_ + 2 <= cfg_.n_unique &&
      uniform() < cfg_.orphan_rate) {
    create_orphan_pair(t);
  } else {
    TxPtr tx = cfg_.chain == Chain::Btc ? make_btc(t, spam) : make_eth(t);
    schedule_deliveries(tx, t);
    assign_fate(tx, t);
    remember(tx, t);
  }
  maybe_replay(t);
  advance_creation_clock();
}

TraceEvent TraceGenerator::stamp(std::uint64_t ts, EventKind kind) {
  TraceEvent ev;
  ev.seq = ++seq_;
  ev.ts_ms = ts;
  ev.kind = std::move(kind);
  return ev;
}

std::optional<TraceEvent> TraceGenerator::emit_block() {
  const std::uint64_t t = next_block_ts_;
  next_block_ts_ += cfg_.block_interval_ms;
  std::vector<PendingConfirm> due = std::move(deferred_);
  deferred_.clear();
  while (!confirm_queue_.empty() && confirm_queue_.top().due <= t) {
    due.push_back(confirm_queue_.top());
    confirm_queue_.pop();
  }
  std::sort(due.begin(), due.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::unordered_set<std::uint64_t> included;
  Block block;
  for (auto& p : due) {
    bool ready = p.tx->emitted;
    for (auto parent : p.tx->parents) {
      if (unconfirmed_.contains(parent) && !included.contains(parent)) ready = false;
    }
    if (ready) {
      block.txids.push_back(p.tx->hash(cfg_.chain));
      included.insert(p.id);
    } else {
      deferred_.push_back(std::move(p));
    }
  }
  for (auto id : included) unconfirmed_.erase(id);
  if (block.txids.empty()) return std::nullopt;
  return stamp(t, std::move(block));
}

TraceEvent TraceGenerator::emit_scheduled(const Scheduled& s) {
  const TxHash& h = s.tx->hash(cfg_.chain);
  switch (s.what) {
    case Emit::Announce: return stamp(s.ts, Announce{h});
    case Emit::FullTx:
      s.tx->emitted = true;
      if (cfg_.chain == Chain::Btc) return stamp(s.ts, s.tx->btc);
      return stamp(s.ts, s.tx->eth);
    case Emit::Expire: return stamp(s.ts, EgressExpire{h});
  }
  throw std::logic_error("unreachable emit kind");
}

std::optional<TraceEvent> TraceGenerator::next() {
  constexpr auto kNever = std::numeric_limits<std::uint64_t>::max();
  if (!genesis_done_) {
    genesis_done_ = true;
    if (cfg_.chain == Chain::Btc) return stamp(cfg_.start_ts_ms, Block{funding_});
  }
  for (;;) {
    const bool creating = created_ < cfg_.n_unique;
    const std::uint64_t t_create = creating ? static_cast<std::uint64_t>(create_clock_) : kNever;
    const std::uint64_t t_heap = heap_.empty() ? kNever : heap_.top().ts;
    const bool blocks = creating || !confirm_queue_.empty() || !deferred_.empty();
    const std::uint64_t t_block = blocks ? next_block_ts_ : kNever;
    if (t_create == kNever && t_heap == kNever && t_block == kNever) return std::nullopt;
    if (t_create <= t_heap && t_create <= t_block) {
      create_one();
      continue;
    }
    if (t_block <= t_heap) {
      if (auto ev = emit_block()) return ev;
      continue;
    }
    Scheduled s = heap_.top();
    heap_.pop();
    return emit_scheduled(s);
  }
}

}  // namespace neonpool
