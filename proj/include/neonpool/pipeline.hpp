#pragma once

#include "neonpool/filters.hpp"
#include "neonpool/groundtruth.hpp"
#include "neonpool/oracles.hpp"
#include "neonpool/txmodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

namespace neonpool {

struct ExpiryPolicy {
  enum class Kind { None, Hours, Count, Decay };
  Kind kind = Kind::None;
  std::uint64_t value = 0;

  static ExpiryPolicy none() { return {}; }
  static ExpiryPolicy hours(std::uint64_t h) { return {Kind::Hours, h}; }
  static ExpiryPolicy count(std::uint64_t n) { return {Kind::Count, n}; }
  static ExpiryPolicy decay(std::uint64_t d) { return {Kind::Decay, d}; }

  // "none", "h24", "c400000", "d128"
  [[nodiscard]] std::string label() const;
  // Inverse of label(); also accepts k/m suffixes on counts ("c400k").
  static ExpiryPolicy parse(std::string_view token);
  bool operator==(const ExpiryPolicy&) const = default;
};

struct FilterSpec {
  enum class Kind { Standard, Decaying, Chain, Exact };
  Kind kind = Kind::Standard;
  std::uint64_t m_bits = 8'000'000;
  std::uint32_t k = 0;  // 0: optimal for the design capacity
  std::uint32_t decay_d = 0;
  std::uint64_t capacity = 400'000;  // chain segments
  std::uint32_t max_segments = 4;
  bool operator==(const FilterSpec&) const = default;
};

[[nodiscard]] std::string_view to_string(FilterSpec::Kind k);

struct PipelineConfig {
  Chain chain = Chain::Btc;
  FilterSpec filter;
  ExpiryPolicy policy;
  std::size_t orphan_capacity = 100;
  std::uint64_t n_design = 400'000;
  double overhead_factor = 3.0;
  std::optional<std::uint64_t> seed;

  // Throws std::invalid_argument. A decay policy implies a decaying filter with d = value.
  void validate();
  [[nodiscard]] FilterParams filter_params() const;

  static PipelineConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

// Exact membership set; stands in for a filter when isolating pipeline logic.
class ExactSet {
 public:
  void insert(ByteView key) { keys_.emplace(key.begin(), key.end()); }
  [[nodiscard]] bool contains(ByteView key) const {
    return keys_.contains(std::string(key.begin(), key.end()));
  }
  void clear() { keys_.clear(); }
  [[nodiscard]] std::size_t size() const noexcept { return keys_.size(); }
  [[nodiscard]] std::uint64_t memory_bytes() const noexcept;

 private:
  std::unordered_set<std::string> keys_;
};

class TxFilter {
 public:
  using Impl = std::variant<BloomFilter, DecayingBloomFilter, FilterChain, ExactSet>;

  TxFilter(const FilterSpec& spec, const FilterParams& params, SaltSource salts,
           std::uint64_t decay_seed);

  void insert(ByteView key);
  [[nodiscard]] bool contains(ByteView key) const;
  // Clears everything (fresh salt).
  void reset();
  // Chains start a new segment (dropping the oldest when full); other kinds reset.
  void expire_oldest();
  [[nodiscard]] std::uint64_t memory_bytes() const;
  // Salt of the filter receiving inserts; nullopt for exact sets and empty chains.
  [[nodiscard]] std::optional<Salt> current_salt() const;
  [[nodiscard]] const Impl& impl() const noexcept { return impl_; }

 private:
  Impl impl_;
};

enum class IngressDecision { FetchTx, DropDuplicate, DropInvalid, DropDoubleSpend, Orphaned, Relay };

[[nodiscard]] std::string_view to_string(IngressDecision d);

struct IngressOutcome {
  TxHash txid;
  IngressDecision decision;
};

// State shared by both chain variants: the two filters and the expiry policy.
class NeonpoolNode {
 public:
  // Advances the trace clock; returns true if the policy reset the filters.
  bool apply_policy(std::uint64_t now_ms);

  [[nodiscard]] const TxFilter& bloom_tx() const noexcept { return bloom_tx_; }
  [[nodiscard]] const TxFilter& ds_tx() const noexcept { return ds_tx_; }
  [[nodiscard]] const ExpiryPolicy& policy() const noexcept { return policy_; }
  [[nodiscard]] std::uint64_t resets() const noexcept { return resets_; }
  [[nodiscard]] std::uint64_t count_since_reset() const noexcept { return count_since_reset_; }
  [[nodiscard]] std::uint64_t clock_ms() const noexcept { return clock_ms_; }
  [[nodiscard]] std::uint64_t filter_bytes() const { return bloom_tx_.memory_bytes() + ds_tx_.memory_bytes(); }
  // Outcomes of orphans re-processed during the most recent call.
  [[nodiscard]] const std::vector<IngressOutcome>& released() const noexcept { return released_; }

 protected:
  explicit NeonpoolNode(const PipelineConfig& cfg);
  void after_relay();

  PipelineConfig cfg_;
  TxFilter bloom_tx_;
  TxFilter ds_tx_;
  ExpiryPolicy policy_;
  std::vector<IngressOutcome> released_;

 private:
  void reset_filters();

  bool clock_started_ = false;
  std::uint64_t clock_ms_ = 0;
  std::uint64_t last_reset_ms_ = 0;
  std::uint64_t count_since_reset_ = 0;
  std::uint64_t resets_ = 0;
};

class NeonpoolBtc final : public NeonpoolNode {
 public:
  NeonpoolBtc(const PipelineConfig& cfg, const UtxoOracle* utxo);

  IngressDecision on_announce(const TxHash& txid) const;
  IngressDecision on_tx(const BtcTransaction& tx);
  // Retries orphans waiting on newly confirmed parents.
  void on_block(const std::vector<TxHash>& txids);

  [[nodiscard]] const OrphanPool& orphans() const noexcept { return orphans_; }

 private:
  IngressDecision process(const BtcTransaction& tx);
  void release_children(const TxHash& parent);

  const UtxoOracle* utxo_;
  OrphanPool orphans_;
};

class NeonpoolEth final : public NeonpoolNode {
 public:
  NeonpoolEth(const PipelineConfig& cfg, const StateOracle* state);

  IngressDecision on_tx(const EthTransaction& tx);

 private:
  const StateOracle* state_;
};

}  // namespace neonpool
