#include "neonpool/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <random>
#include <stdexcept>

namespace neonpool {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// --- ExpiryPolicy ----------------------------------------------------------

std::string ExpiryPolicy::label() const {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::Hours: return "h" + std::to_string(value);
    case Kind::Count: return "c" + std::to_string(value);
    case Kind::Decay: return "d" + std::to_string(value);
  }
  return "?";
}

namespace {

std::uint64_t parse_count(std::string_view s) {
  std::uint64_t mult = 1;
  if (!s.empty() && (s.back() == 'k' || s.back() == 'K')) {
    mult = 1000;
    s.remove_suffix(1);
  } else if (!s.empty() && (s.back() == 'm' || s.back() == 'M')) {
    mult = 1'000'000;
    s.remove_suffix(1);
  }
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("not a count: '" + std::string(s) + "'");
  return v * mult;
}

}  // namespace

ExpiryPolicy ExpiryPolicy::parse(std::string_view token) {
  if (token == "none") return none();
  if (token.size() < 2) throw std::invalid_argument("bad policy token '" + std::string(token) + "'");
  const std::uint64_t v = parse_count(token.substr(1));
  if (v == 0) throw std::invalid_argument("policy value must be positive: '" + std::string(token) + "'");
  switch (token[0]) {
    case 'h': return hours(v);
    case 'c': return count(v);
    case 'd': return decay(v);
    default: throw std::invalid_argument("bad policy token '" + std::string(token) + "'");
  }
}

std::string_view to_string(FilterSpec::Kind k) {
  switch (k) {
    case FilterSpec::Kind::Standard: return "standard";
    case FilterSpec::Kind::Decaying: return "decaying";
    case FilterSpec::Kind::Chain: return "chain";
    case FilterSpec::Kind::Exact: return "exact";
  }
  return "?";
}

// --- PipelineConfig --------------------------------------------------------

void PipelineConfig::validate() {
  if (filter.m_bits == 0) throw std::invalid_argument("filter.m_bits must be positive");
  if (filter.k > 255) throw std::invalid_argument("filter.k must be at most 255");
  if (n_design == 0) throw std::invalid_argument("n_design must be positive");
  if (policy.kind != ExpiryPolicy::Kind::None && policy.value == 0)
    throw std::invalid_argument("policy value must be positive");
  if (policy.kind == ExpiryPolicy::Kind::Decay) {
    if (filter.kind == FilterSpec::Kind::Chain || filter.kind == FilterSpec::Kind::Exact)
      throw std::invalid_argument("decay policy needs a standard or decaying filter");
    if (policy.value > 0xFFFFFFFFULL) throw std::invalid_argument("decay value too large");
    filter.kind = FilterSpec::Kind::Decaying;
    filter.decay_d = static_cast<std::uint32_t>(policy.value);
  }
  if (filter.kind == FilterSpec::Kind::Chain) {
    if (filter.capacity == 0) throw std::invalid_argument("filter.capacity must be positive");
    if (filter.max_segments == 0) throw std::invalid_argument("filter.max_segments must be positive");
  }
  if (!(overhead_factor >= 0.0)) throw std::invalid_argument("overhead_factor must be >= 0");
}

FilterParams PipelineConfig::filter_params() const {
  const std::uint32_t k = filter.k != 0 ? filter.k : optimal_k(filter.m_bits, n_design);
  return FilterParams::make(filter.m_bits, std::min<std::uint32_t>(k, 255), n_design);
}

namespace {

template <typename T>
void read_opt(const json& j, const char* name, T& out) {
  if (auto it = j.find(name); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("pipeline config must be a JSON object");
  PipelineConfig c;
  try {
    if (auto it = j.find("chain"); it != j.end()) c.chain = chain_from_string(it->get<std::string>());
    c.n_design = c.chain == Chain::Btc ? 400'000 : 700'000;
    read_opt(j, "n_design", c.n_design);
    if (auto it = j.find("filter"); it != j.end()) {
      const json& f = *it;
      if (!f.is_object()) throw std::invalid_argument("'filter' must be an object");
      std::string kind = "standard";
      read_opt(f, "kind", kind);
      if (kind == "standard") c.filter.kind = FilterSpec::Kind::Standard;
      else if (kind == "decaying") c.filter.kind = FilterSpec::Kind::Decaying;
      else if (kind == "chain") c.filter.kind = FilterSpec::Kind::Chain;
      else if (kind == "exact") c.filter.kind = FilterSpec::Kind::Exact;
      else throw std::invalid_argument("unknown filter kind '" + kind + "'");
      read_opt(f, "m_bits", c.filter.m_bits);
      read_opt(f, "k", c.filter.k);
      read_opt(f, "decay_d", c.filter.decay_d);
      read_opt(f, "capacity", c.filter.capacity);
      read_opt(f, "max_segments", c.filter.max_segments);
    }
    if (auto it = j.find("policy"); it != j.end()) {
      const json& p = *it;
      if (!p.is_object()) throw std::invalid_argument("'policy' must be an object");
      std::string kind = "none";
      read_opt(p, "kind", kind);
      std::uint64_t value = 0;
      read_opt(p, "value", value);
      if (kind == "none") c.policy = ExpiryPolicy::none();
      else if (kind == "hours") c.policy = ExpiryPolicy::hours(value);
      else if (kind == "count") c.policy = ExpiryPolicy::count(value);
      else if (kind == "decay") c.policy = ExpiryPolicy::decay(value);
      else throw std::invalid_argument("unknown policy kind '" + kind + "'");
    }
    read_opt(j, "orphan_capacity", c.orphan_capacity);
    read_opt(j, "overhead_factor", c.overhead_factor);
    if (auto it = j.find("seed"); it != j.end() && !it->is_null()) c.seed = it->get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

ojson PipelineConfig::to_json() const {
  static constexpr const char* policy_names[] = {"none", "hours", "count", "decay"};
  ojson j;
  j["chain"] = std::string(to_string(chain));
  ojson f;
  f["kind"] = std::string(to_string(filter.kind));
  f["m_bits"] = filter.m_bits;
  f["k"] = filter_params().k;
  f["decay_d"] = filter.decay_d;
  f["capacity"] = filter.capacity;
  f["max_segments"] = filter.max_segments;
  j["filter"] = std::move(f);
  ojson p;
  p["kind"] = policy_names[static_cast<int>(policy.kind)];
  p["value"] = policy.value;
  j["policy"] = std::move(p);
  j["orphan_capacity"] = orphan_capacity;
  j["n_design"] = n_design;
  j["overhead_factor"] = overhead_factor;
  if (seed) j["seed"] = *seed;
  else j["seed"] = nullptr;
  return j;
}

// --- TxFilter --------------------------------------------------------------

std::uint64_t ExactSet::memory_bytes() const noexcept {
  std::uint64_t total = 0;
  for (const auto& k : keys_) total += k.size();
  return total;
}

namespace {

TxFilter::Impl make_impl(const FilterSpec& spec, const FilterParams& params, SaltSource salts,
                         std::uint64_t decay_seed) {
  switch (spec.kind) {
    case FilterSpec::Kind::Standard: return BloomFilter(params, std::move(salts));
    case FilterSpec::Kind::Decaying:
      return DecayingBloomFilter(params, spec.decay_d, std::move(salts), decay_seed);
    case FilterSpec::Kind::Chain:
      return FilterChain(params, spec.capacity, spec.max_segments, std::move(salts));
    case FilterSpec::Kind::Exact: return ExactSet{};
  }
  throw std::logic_error("unreachable filter kind");
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

TxFilter::TxFilter(const FilterSpec& spec, const FilterParams& params, SaltSource salts,
                   std::uint64_t decay_seed)
    : impl_(make_impl(spec, params, std::move(salts), decay_seed)) {}

void TxFilter::insert(ByteView key) {
  std::visit([&](auto& f) { f.insert(key); }, impl_);
}

bool TxFilter::contains(ByteView key) const {
  return std::visit([&](const auto& f) { return f.contains(key); }, impl_);
}

void TxFilter::reset() {
  std::visit([](auto& f) { f.clear(); }, impl_);
}

void TxFilter::expire_oldest() {
  std::visit(overloaded{[](FilterChain& c) { c.advance(); }, [](auto& f) { f.clear(); }}, impl_);
}

std::uint64_t TxFilter::memory_bytes() const {
  return std::visit(overloaded{[](const BloomFilter& f) { return f.memory_bytes(); },
                               [](const DecayingBloomFilter& f) { return f.inner().memory_bytes(); },
                               [](const FilterChain& c) { return c.memory_bytes(); },
                               [](const ExactSet& s) { return s.memory_bytes(); }},
                    impl_);
}

std::optional<Salt> TxFilter::current_salt() const {
  return std::visit(
      overloaded{[](const BloomFilter& f) -> std::optional<Salt> { return f.salt(); },
                 [](const DecayingBloomFilter& f) -> std::optional<Salt> { return f.inner().salt(); },
                 [](const FilterChain& c) -> std::optional<Salt> {
                   if (c.segments().empty()) return std::nullopt;
                   return c.segments().back().salt();
                 },
                 [](const ExactSet&) -> std::optional<Salt> { return std::nullopt; }},
      impl_);
}

std::string_view to_string(IngressDecision d) {
  switch (d) {
    case IngressDecision::FetchTx: return "fetch_tx";
    case IngressDecision::DropDuplicate: return "drop_duplicate";
    case IngressDecision::DropInvalid: return "drop_invalid";
    case IngressDecision::DropDoubleSpend: return "drop_double_spend";
    case IngressDecision::Orphaned: return "orphaned";
    case IngressDecision::Relay: return "relay";
  }
  return "?";
}

// --- NeonpoolNode ----------------------------------------------------------

namespace {

SaltSource root_salts(const PipelineConfig& cfg) {
  return cfg.seed ? SaltSource::seeded(*cfg.seed) : SaltSource::entropy();
}

std::uint64_t decay_seed(const PipelineConfig& cfg, std::uint64_t stream) {
  if (!cfg.seed) {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }
  SplitMix64 mix(*cfg.seed ^ (0xA5A5A5A5DEADBEEFULL + stream * 0x9E3779B97F4A7C15ULL));
  return mix.next();
}

PipelineConfig validated(PipelineConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

NeonpoolNode::NeonpoolNode(const PipelineConfig& cfg)
    : cfg_(validated(cfg)),
      bloom_tx_(cfg_.filter, cfg_.filter_params(), root_salts(cfg_).fork(1), decay_seed(cfg_, 1)),
      ds_tx_(cfg_.filter, cfg_.filter_params(), root_salts(cfg_).fork(2), decay_seed(cfg_, 2)),
      policy_(cfg_.policy) {}

void NeonpoolNode::reset_filters() {
  bloom_tx_.expire_oldest();
  ds_tx_.expire_oldest();
  count_since_reset_ = 0;
  last_reset_ms_ = clock_ms_;
  ++resets_;
}

bool NeonpoolNode::apply_policy(std::uint64_t now_ms) {
  if (!clock_started_) {
    clock_started_ = true;
    clock_ms_ = now_ms;
    last_reset_ms_ = now_ms;
  }
  clock_ms_ = std::max(clock_ms_, now_ms);
  switch (policy_.kind) {
    case ExpiryPolicy::Kind::Hours:
      if (clock_ms_ - last_reset_ms_ >= policy_.value * 3'600'000ULL) {
        reset_filters();
        return true;
      }
      return false;
    case ExpiryPolicy::Kind::Count:
      if (count_since_reset_ >= policy_.value) {
        reset_filters();
        return true;
      }
      return false;
    case ExpiryPolicy::Kind::None:
    case ExpiryPolicy::Kind::Decay: return false;
  }
  return false;
}

void NeonpoolNode::after_relay() {
  ++count_since_reset_;
  if (policy_.kind == ExpiryPolicy::Kind::Count && count_since_reset_ >= policy_.value)
    reset_filters();
}

// --- NeonpoolBtc -----------------------------------------------------------

NeonpoolBtc::NeonpoolBtc(const PipelineConfig& cfg, const UtxoOracle* utxo)
    : NeonpoolNode(cfg), utxo_(utxo), orphans_(cfg_.orphan_capacity) {
  if (cfg_.chain != Chain::Btc) throw std::invalid_argument("NeonpoolBtc needs a btc config");
}

IngressDecision NeonpoolBtc::on_announce(const TxHash& txid) const {
  if (bloom_tx_.contains(txid) || orphans_.contains(txid)) return IngressDecision::DropDuplicate;
  return IngressDecision::FetchTx;
}

IngressDecision NeonpoolBtc::on_tx(const BtcTransaction& tx) {
  released_.clear();
  if (orphans_.contains(tx.txid) || bloom_tx_.contains(tx.txid)) return IngressDecision::DropDuplicate;
  const IngressDecision d = process(tx);
  if (d == IngressDecision::Relay) release_children(tx.txid);
  return d;
}

IngressDecision NeonpoolBtc::process(const BtcTransaction& tx) {
  const ByteView txkey(tx.txid);
  if (!tx.valid) {
    bloom_tx_.insert(txkey);
    return IngressDecision::DropInvalid;
  }
  bool spent = false;
  std::vector<TxHash> missing;
  for (const auto& in : tx.inputs) {
    const UtxoStatus s = utxo_ ? utxo_->lookup(in) : UtxoStatus::Unspent;
    if (s == UtxoStatus::Spent) {
      spent = true;
    } else if (s == UtxoStatus::Missing &&
               (!bloom_tx_.contains(in.input_tx_hash) || orphans_.contains(in.input_tx_hash)) &&
               std::find(missing.begin(), missing.end(), in.input_tx_hash) == missing.end()) {
      missing.push_back(in.input_tx_hash);
    }
  }
  if (spent) {
    bloom_tx_.insert(txkey);
    return IngressDecision::DropInvalid;
  }
  if (!missing.empty()) {
    // Recorded as seen so that evicting the orphan is not a silent expiry.
    bloom_tx_.insert(txkey);
    orphans_.add(tx, missing);
    return IngressDecision::Orphaned;
  }
  for (const auto& in : tx.inputs) {
    if (ds_tx_.contains(btc_input_key(in))) {
      bloom_tx_.insert(txkey);
      return IngressDecision::DropDoubleSpend;
    }
  }
  bloom_tx_.insert(txkey);
  for (const auto& in : tx.inputs) ds_tx_.insert(btc_input_key(in));
  after_relay();
  return IngressDecision::Relay;
}

void NeonpoolBtc::release_children(const TxHash& parent) {
  for (const auto& child : orphans_.take_waiting_on(parent)) {
    const IngressDecision d = process(child);
    released_.push_back({child.txid, d});
    if (d == IngressDecision::Relay) release_children(child.txid);
  }
}

void NeonpoolBtc::on_block(const std::vector<TxHash>& txids) {
  released_.clear();
  for (const auto& txid : txids) release_children(txid);
}

// --- NeonpoolEth -----------------------------------------------------------

NeonpoolEth::NeonpoolEth(const PipelineConfig& cfg, const StateOracle* state)
    : NeonpoolNode(cfg), state_(state) {
  if (cfg_.chain != Chain::Eth) throw std::invalid_argument("NeonpoolEth needs an eth config");
}

IngressDecision NeonpoolEth::on_tx(const EthTransaction& tx) {
  released_.clear();
  const ByteView txkey(tx.hash);
  if (bloom_tx_.contains(txkey)) return IngressDecision::DropDuplicate;
  if (!tx.valid || (state_ && !state_->admissible(tx))) {
    bloom_tx_.insert(txkey);
    return IngressDecision::DropInvalid;
  }
  const auto acct = eth_account_key(tx);
  if (ds_tx_.contains(acct)) {
    bloom_tx_.insert(txkey);
    return IngressDecision::DropDoubleSpend;
  }
  bloom_tx_.insert(txkey);
  ds_tx_.insert(acct);
  after_relay();
  return IngressDecision::Relay;
}

}  // namespace neonpool
