#include "neonpool/groundtruth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace neonpool {

std::string_view to_string(Chain c) { return c == Chain::Btc ? "btc" : "eth"; }

Chain chain_from_string(std::string_view s) {
  if (s == "btc") return Chain::Btc;
  if (s == "eth") return Chain::Eth;
  throw std::invalid_argument("unknown chain '" + std::string(s) + "' (expected btc or eth)");
}

std::string_view to_string(RefDecision d) {
  switch (d) {
    case RefDecision::Accepted: return "accepted";
    case RefDecision::DropDuplicate: return "drop_duplicate";
    case RefDecision::DropInvalid: return "drop_invalid";
    case RefDecision::DropDoubleSpend: return "drop_double_spend";
    case RefDecision::Orphaned: return "orphaned";
  }
  return "?";
}

// --- ChainState ------------------------------------------------------------

void ChainState::observe(const BtcTransaction& tx, std::uint64_t ts_ms) {
  purge(ts_ms);
  if (confirmed_.contains(tx.txid)) return;
  btc_bodies_[tx.txid] = BtcBody{tx.inputs, ts_ms};
  body_order_.emplace_back(ts_ms, tx.txid);
}

void ChainState::observe(const EthTransaction& tx, std::uint64_t ts_ms) {
  purge(ts_ms);
  if (confirmed_.contains(tx.hash)) return;
  eth_bodies_[tx.hash] = EthBody{tx.sender, tx.nonce, ts_ms};
  body_order_.emplace_back(ts_ms, tx.hash);
}

void ChainState::purge(std::uint64_t now_ms) {
  while (!body_order_.empty() && body_order_.front().first + retention_ms_ < now_ms) {
    const auto& [ts, txid] = body_order_.front();
    if (auto it = btc_bodies_.find(txid); it != btc_bodies_.end() && it->second.ts_ms == ts)
      btc_bodies_.erase(it);
    if (auto it = eth_bodies_.find(txid); it != eth_bodies_.end() && it->second.ts_ms == ts)
      eth_bodies_.erase(it);
    body_order_.pop_front();
  }
}

void ChainState::confirm_block(const std::vector<TxHash>& txids) {
  for (const auto& txid : txids) {
    confirmed_.insert(txid);
    if (auto it = btc_bodies_.find(txid); it != btc_bodies_.end()) {
      for (const auto& in : it->second.inputs) spent_.insert(btc_input_key(in));
      btc_bodies_.erase(it);
    }
    if (auto it = eth_bodies_.find(txid); it != eth_bodies_.end()) {
      auto& next = next_nonce_[it->second.sender];
      next = std::max(next, it->second.nonce + 1);
      eth_bodies_.erase(it);
    }
  }
}

void ChainState::forget(const TxHash& txid) {
  btc_bodies_.erase(txid);
  eth_bodies_.erase(txid);
}

UtxoStatus ChainState::lookup(const BtcInput& input) const {
  if (spent_.contains(btc_input_key(input))) return UtxoStatus::Spent;
  if (confirmed_.contains(input.input_tx_hash)) return UtxoStatus::Unspent;
  return UtxoStatus::Missing;
}

std::uint64_t ChainState::next_nonce(const Address& sender) const {
  auto it = next_nonce_.find(sender);
  return it == next_nonce_.end() ? 0 : it->second;
}

bool ChainState::admissible(const EthTransaction& tx) const {
  if (tx.nonce < next_nonce(tx.sender)) return false;
  if (auto it = balances_.find(tx.sender); it != balances_.end() && tx.amount > it->second)
    return false;
  return true;
}

// --- OrphanPool ------------------------------------------------------------

void OrphanPool::add(const BtcTransaction& tx, const std::vector<TxHash>& missing_parents) {
  if (capacity_ == 0 || entries_.contains(tx.txid)) return;
  while (entries_.size() >= capacity_ && !fifo_.empty()) {
    const auto [order, victim] = fifo_.front();
    fifo_.pop_front();
    auto it = entries_.find(victim);
    if (it != entries_.end() && it->second.order == order) {
      erase(victim);
      ++evictions_;
    }
  }
  const std::uint64_t order = next_order_++;
  entries_.emplace(tx.txid, Entry{tx, missing_parents, order});
  fifo_.emplace_back(order, tx.txid);
  if (fifo_.size() > 4 * capacity_ + 16) {
    std::erase_if(fifo_, [this](const auto& e) {
      auto it = entries_.find(e.second);
      return it == entries_.end() || it->second.order != e.first;
    });
  }
  for (const auto& p : missing_parents) waiting_.emplace(p, tx.txid);
}

void OrphanPool::erase(const TxHash& txid) {
  auto it = entries_.find(txid);
  if (it == entries_.end()) return;
  for (const auto& p : it->second.parents) {
    auto [lo, hi] = waiting_.equal_range(p);
    for (auto w = lo; w != hi;) {
      if (w->second == txid) {
        w = waiting_.erase(w);
      } else {
        ++w;
      }
    }
  }
  entries_.erase(it);
}

std::vector<BtcTransaction> OrphanPool::take_waiting_on(const TxHash& parent) {
  std::vector<std::pair<std::uint64_t, TxHash>> children;
  auto [lo, hi] = waiting_.equal_range(parent);
  for (auto w = lo; w != hi; ++w) {
    auto it = entries_.find(w->second);
    if (it != entries_.end()) children.emplace_back(it->second.order, w->second);
  }
  std::sort(children.begin(), children.end());
  std::vector<BtcTransaction> out;
  out.reserve(children.size());
  for (const auto& [order, txid] : children) {
    auto it = entries_.find(txid);
    if (it == entries_.end()) continue;
    out.push_back(std::move(it->second.tx));
    erase(txid);
  }
  // Stale fifo entries are skipped lazily on eviction.
  return out;
}

// --- ReferencePool ---------------------------------------------------------

ReferencePool::ReferencePool(Chain chain, const UtxoOracle* utxo, const StateOracle* state,
                             std::size_t orphan_capacity, double overhead_factor)
    : chain_(chain), utxo_(utxo), state_(state), overhead_(overhead_factor),
      orphans_(orphan_capacity) {
  if (!(overhead_factor >= 0.0)) throw std::invalid_argument("overhead_factor must be >= 0");
}

RefDecision ReferencePool::receive(const BtcTransaction& tx) {
  released_.clear();
  if (orphans_.contains(tx.txid)) return RefDecision::DropDuplicate;
  return process(tx);
}

RefDecision ReferencePool::process(const BtcTransaction& tx) {
  if (ever_seen_.contains(tx.txid)) return RefDecision::DropDuplicate;
  if (!tx.valid) {
    ever_seen_.insert(tx.txid);
    return RefDecision::DropInvalid;
  }
  bool spent = false;
  std::vector<TxHash> missing;
  for (const auto& in : tx.inputs) {
    const UtxoStatus s = utxo_ ? utxo_->lookup(in) : UtxoStatus::Unspent;
    if (s == UtxoStatus::Spent) {
      spent = true;
    } else if (s == UtxoStatus::Missing && !ever_seen_.contains(in.input_tx_hash) &&
               std::find(missing.begin(), missing.end(), in.input_tx_hash) == missing.end()) {
      missing.push_back(in.input_tx_hash);
    }
  }
  if (spent) {
    ever_seen_.insert(tx.txid);
    return RefDecision::DropInvalid;
  }
  if (!missing.empty()) {
    orphans_.add(tx, missing);
    return RefDecision::Orphaned;
  }
  for (const auto& in : tx.inputs) {
    if (btc_input_index_.contains(btc_input_key(in))) {
      ever_seen_.insert(tx.txid);
      return RefDecision::DropDoubleSpend;
    }
  }
  for (const auto& in : tx.inputs) btc_input_index_.emplace(btc_input_key(in), tx.txid);
  btc_pool_.emplace(tx.txid, tx);
  ever_seen_.insert(tx.txid);
  raw_bytes_ += tx.raw_size_bytes;
  release_children(tx.txid);
  return RefDecision::Accepted;
}

void ReferencePool::release_children(const TxHash& parent) {
  for (const auto& child : orphans_.take_waiting_on(parent)) {
    const RefDecision d = process(child);
    released_.push_back({child.txid, d});
  }
}

RefDecision ReferencePool::receive(const EthTransaction& tx) {
  released_.clear();
  if (ever_seen_.contains(tx.hash)) return RefDecision::DropDuplicate;
  if (!tx.valid || (state_ && !state_->admissible(tx))) {
    ever_seen_.insert(tx.hash);
    return RefDecision::DropInvalid;
  }
  const auto key = eth_account_key(tx);
  if (eth_account_index_.contains(key)) {
    ever_seen_.insert(tx.hash);
    return RefDecision::DropDoubleSpend;
  }
  eth_account_index_.emplace(key, tx.hash);
  eth_pool_.emplace(tx.hash, tx);
  ever_seen_.insert(tx.hash);
  raw_bytes_ += tx.raw_size_bytes;
  return RefDecision::Accepted;
}

bool ReferencePool::in_pool(const TxHash& txid) const {
  return btc_pool_.contains(txid) || eth_pool_.contains(txid);
}

void ReferencePool::drop_from_pool(const TxHash& txid) {
  if (auto it = btc_pool_.find(txid); it != btc_pool_.end()) {
    for (const auto& in : it->second.inputs) {
      auto idx = btc_input_index_.find(btc_input_key(in));
      if (idx != btc_input_index_.end() && idx->second == txid) btc_input_index_.erase(idx);
    }
    raw_bytes_ -= it->second.raw_size_bytes;
    btc_pool_.erase(it);
  }
  if (auto it = eth_pool_.find(txid); it != eth_pool_.end()) {
    auto idx = eth_account_index_.find(eth_account_key(it->second));
    if (idx != eth_account_index_.end() && idx->second == txid) eth_account_index_.erase(idx);
    raw_bytes_ -= it->second.raw_size_bytes;
    eth_pool_.erase(it);
  }
}

std::size_t ReferencePool::remove_block(const std::vector<TxHash>& txids) {
  released_.clear();
  std::size_t removed = 0;
  for (const auto& txid : txids) {
    if (in_pool(txid)) {
      drop_from_pool(txid);
      ++removed;
    }
  }
  if (chain_ == Chain::Btc) {
    for (const auto& txid : txids) release_children(txid);
  }
  return removed;
}

bool ReferencePool::expire(const TxHash& txid) {
  if (!in_pool(txid)) return false;
  drop_from_pool(txid);
  return true;
}

std::uint64_t ReferencePool::memory_bytes() const noexcept {
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(raw_bytes_) * overhead_));
}

bool ReferencePool::indexes_consistent() const {
  std::unordered_map<BtcInputKey, TxHash, ByteArrayHasher> btc;
  for (const auto& [txid, tx] : btc_pool_) {
    for (const auto& in : tx.inputs) {
      if (!btc.emplace(btc_input_key(in), txid).second) return false;
    }
  }
  std::unordered_map<EthAccountKey, TxHash, ByteArrayHasher> eth;
  for (const auto& [hash, tx] : eth_pool_) {
    if (!eth.emplace(eth_account_key(tx), hash).second) return false;
  }
  std::uint64_t bytes = 0;
  for (const auto& [txid, tx] : btc_pool_) bytes += tx.raw_size_bytes;
  for (const auto& [hash, tx] : eth_pool_) bytes += tx.raw_size_bytes;
  for (const auto& [txid, tx] : btc_pool_)
    if (!ever_seen_.contains(txid)) return false;
  for (const auto& [hash, tx] : eth_pool_)
    if (!ever_seen_.contains(hash)) return false;
  return btc == btc_input_index_ && eth == eth_account_index_ && bytes == raw_bytes_;
}

}  // namespace neonpool
