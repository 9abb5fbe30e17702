#pragma once

#include "neonpool/oracles.hpp"
#include "neonpool/txmodel.hpp"

#include <cstdint>
#include <deque>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace neonpool {

enum class Chain { Btc, Eth };

[[nodiscard]] std::string_view to_string(Chain c);
[[nodiscard]] Chain chain_from_string(std::string_view s);

using TxHashSet = std::unordered_set<TxHash, ByteArrayHasher>;

// Chain view reconstructed from the trace: which txids are confirmed, which outpoints
// confirmed transactions have spent, and each sender's next confirmable nonce.
// Bodies of unconfirmed transactions are remembered (from tx events) so that a block,
// which carries only txids, can mark their inputs spent.
class ChainState final : public UtxoOracle, public StateOracle {
 public:
  static constexpr std::uint64_t kDefaultBodyRetentionMs = 72ULL * 3600 * 1000;

  explicit ChainState(std::uint64_t body_retention_ms = kDefaultBodyRetentionMs)
      : retention_ms_(body_retention_ms) {}

  void observe(const BtcTransaction& tx, std::uint64_t ts_ms);
  void observe(const EthTransaction& tx, std::uint64_t ts_ms);
  void confirm_block(const std::vector<TxHash>& txids);
  // Egress without confirmation: the body is no longer needed.
  void forget(const TxHash& txid);

  [[nodiscard]] UtxoStatus lookup(const BtcInput& input) const override;
  [[nodiscard]] bool admissible(const EthTransaction& tx) const override;

  [[nodiscard]] bool is_confirmed(const TxHash& txid) const { return confirmed_.contains(txid); }
  [[nodiscard]] std::uint64_t next_nonce(const Address& sender) const;
  // Optional balance bookkeeping; senders without an entry are unconstrained.
  void set_balance(const Address& sender, Wei balance) { balances_[sender] = balance; }

  [[nodiscard]] std::size_t confirmed_count() const noexcept { return confirmed_.size(); }
  [[nodiscard]] std::size_t pending_bodies() const noexcept { return btc_bodies_.size() + eth_bodies_.size(); }

 private:
  struct BtcBody {
    std::vector<BtcInput> inputs;
    std::uint64_t ts_ms;
  };
  struct EthBody {
    Address sender;
    std::uint64_t nonce;
    std::uint64_t ts_ms;
  };
  void purge(std::uint64_t now_ms);

  std::uint64_t retention_ms_;
  TxHashSet confirmed_;
  std::unordered_set<BtcInputKey, ByteArrayHasher> spent_;
  std::unordered_map<Address, std::uint64_t, ByteArrayHasher> next_nonce_;
  std::unordered_map<Address, Wei, ByteArrayHasher> balances_;
  std::unordered_map<TxHash, BtcBody, ByteArrayHasher> btc_bodies_;
  std::unordered_map<TxHash, EthBody, ByteArrayHasher> eth_bodies_;
  std::deque<std::pair<std::uint64_t, TxHash>> body_order_;
};

// Bounded store of transactions waiting for missing parents; FIFO eviction.
class OrphanPool {
 public:
  explicit OrphanPool(std::size_t capacity) : capacity_(capacity) {}

  // Ignored if already present or capacity is zero.
  void add(const BtcTransaction& tx, const std::vector<TxHash>& missing_parents);
  [[nodiscard]] bool contains(const TxHash& txid) const { return entries_.contains(txid); }
  // Removes and returns the orphans that list `parent`, oldest first.
  std::vector<BtcTransaction> take_waiting_on(const TxHash& parent);

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::uint64_t evictions() const noexcept { return evictions_; }

 private:
  struct Entry {
    BtcTransaction tx;
    std::vector<TxHash> parents;
    std::uint64_t order;
  };
  void erase(const TxHash& txid);

  std::size_t capacity_;
  std::uint64_t next_order_ = 0;
  std::uint64_t evictions_ = 0;
  std::unordered_map<TxHash, Entry, ByteArrayHasher> entries_;
  std::deque<std::pair<std::uint64_t, TxHash>> fifo_;
  std::unordered_multimap<TxHash, TxHash, ByteArrayHasher> waiting_;
};

enum class RefDecision { Accepted, DropDuplicate, DropInvalid, DropDoubleSpend, Orphaned };

[[nodiscard]] std::string_view to_string(RefDecision d);

struct RefOutcome {
  TxHash txid;
  RefDecision decision;
};

// Map-based transaction pool used as ground truth. Duplicate screening uses the full
// history of processed txids (ever_seen), not the current pool contents.
class ReferencePool {
 public:
  ReferencePool(Chain chain, const UtxoOracle* utxo, const StateOracle* state,
                std::size_t orphan_capacity = 100, double overhead_factor = 3.0);

  RefDecision receive(const BtcTransaction& tx);
  RefDecision receive(const EthTransaction& tx);
  // Orphans re-processed during the most recent receive/remove_block call.
  [[nodiscard]] const std::vector<RefOutcome>& released() const noexcept { return released_; }

  // Whether an announcement of `txid` would be screened out.
  [[nodiscard]] bool seen(const TxHash& txid) const {
    return ever_seen_.contains(txid) || orphans_.contains(txid);
  }
  [[nodiscard]] bool ever_seen(const TxHash& txid) const { return ever_seen_.contains(txid); }
  [[nodiscard]] bool in_pool(const TxHash& txid) const;

  // Drops confirmed transactions and retries orphans whose parents they were.
  std::size_t remove_block(const std::vector<TxHash>& txids);
  bool expire(const TxHash& txid);

  [[nodiscard]] std::uint64_t memory_bytes() const noexcept;
  [[nodiscard]] std::uint64_t raw_bytes_total() const noexcept { return raw_bytes_; }
  [[nodiscard]] std::size_t pool_size() const noexcept { return btc_pool_.size() + eth_pool_.size(); }
  [[nodiscard]] std::size_t ever_seen_size() const noexcept { return ever_seen_.size(); }
  [[nodiscard]] const OrphanPool& orphans() const noexcept { return orphans_; }
  [[nodiscard]] Chain chain() const noexcept { return chain_; }

  // Rebuilds the double-spend indexes from the pooled transactions and compares.
  [[nodiscard]] bool indexes_consistent() const;

 private:
  RefDecision process(const BtcTransaction& tx);
  void release_children(const TxHash& parent);
  void drop_from_pool(const TxHash& txid);

  Chain chain_;
  const UtxoOracle* utxo_;
  const StateOracle* state_;
  double overhead_;
  std::unordered_map<TxHash, BtcTransaction, ByteArrayHasher> btc_pool_;
  std::unordered_map<TxHash, EthTransaction, ByteArrayHasher> eth_pool_;
  std::unordered_map<BtcInputKey, TxHash, ByteArrayHasher> btc_input_index_;
  std::unordered_map<EthAccountKey, TxHash, ByteArrayHasher> eth_account_index_;
  TxHashSet ever_seen_;
  OrphanPool orphans_;
  std::uint64_t raw_bytes_ = 0;
  std::vector<RefOutcome> released_;
};

}  // namespace neonpool
