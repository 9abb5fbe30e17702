#include "neonpool/filters.hpp"

#include <sodium.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace neonpool {

namespace {

constexpr std::array<char, 16> kSnapshotMagic = {'N', 'E', 'O', 'N', 'P', 'O', 'O', 'L',
                                                 'F', 'I', 'L', 'T', 'E', 'R', '\0', '\0'};

struct HashPair {
  std::uint64_t h1;
  std::uint64_t h2;
};

std::uint64_t load_le64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

HashPair keyed_hash(ByteView key, const Salt& salt) {
  static_assert(crypto_shorthash_siphashx24_BYTES == 16);
  static_assert(crypto_shorthash_siphashx24_KEYBYTES == 16);
  std::array<std::uint8_t, 16> digest{};
  crypto_shorthash_siphashx24(digest.data(), key.data(), key.size(), salt.bytes.data());
  return {load_le64(digest.data()), load_le64(digest.data() + 8) | 1ULL};
}

void write_le(std::ostream& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_le(std::istream& in, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw SnapshotError("truncated filter snapshot");
    v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

FilterParams FilterParams::make(std::uint64_t m_bits, std::uint32_t k, std::uint64_t n_design) {
  if (m_bits == 0) throw std::invalid_argument("m_bits must be at least 1");
  if (k == 0 || k > 255) throw std::invalid_argument("k must be in [1, 255]");
  if (n_design == 0) throw std::invalid_argument("n_design must be at least 1");
  FilterParams p;
  p.m_bits = m_bits;
  p.k = static_cast<std::uint8_t>(k);
  p.n_design = n_design;
  p.p_theory = theoretical_fpr(m_bits, n_design, k);
  return p;
}

double theoretical_fpr(std::uint64_t m_bits, std::uint64_t n, std::uint64_t k) {
  if (m_bits == 0) throw std::invalid_argument("theoretical_fpr: m_bits must be at least 1");
  if (k == 0) throw std::invalid_argument("theoretical_fpr: k must be at least 1");
  if (n == 0) return 0.0;
  const double kd = static_cast<double>(k);
  const double occupied = -std::expm1(-kd * static_cast<double>(n) / static_cast<double>(m_bits));
  return std::pow(occupied, kd);
}

std::uint64_t required_size(std::uint64_t n, double p_target) {
  if (n == 0) throw std::invalid_argument("required_size: n must be at least 1");
  if (!(p_target > 0.0 && p_target < 1.0))
    throw std::invalid_argument("required_size: p_target must lie in (0, 1)");
  const double ln2 = std::log(2.0);
  return static_cast<std::uint64_t>(
      std::ceil(-static_cast<double>(n) * std::log(p_target) / (ln2 * ln2)));
}

std::uint32_t optimal_k(std::uint64_t m_bits, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("optimal_k: n must be at least 1");
  const double k =
      std::round(static_cast<double>(m_bits) / static_cast<double>(n) * std::log(2.0));
  return k < 1.0 ? 1U : static_cast<std::uint32_t>(k);
}

FilterParams dimension_for_size(std::uint64_t n, std::uint64_t m_bits) {
  return FilterParams::make(m_bits, optimal_k(m_bits, n), n);
}

FilterParams dimension_for_target(std::uint64_t n, double p_target) {
  const auto m = required_size(n, p_target);
  return FilterParams::make(m, optimal_k(m, n), n);
}

// --- salts -----------------------------------------------------------------

SaltSource::SaltSource(std::optional<std::uint64_t> seed) {
  if (seed) stream_.emplace(*seed);
}

Salt SaltSource::next() {
  Salt s;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  if (stream_) {
    a = stream_->next();
    b = stream_->next();
  } else {
    std::random_device rd;
    a = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    b = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }
  for (int i = 0; i < 8; ++i) {
    s.bytes[i] = static_cast<std::uint8_t>(a >> (8 * i));
    s.bytes[8 + i] = static_cast<std::uint8_t>(b >> (8 * i));
  }
  return s;
}

SaltSource SaltSource::fork(std::uint64_t stream_id) {
  if (!stream_) return entropy();
  SplitMix64 mix(stream_->next() ^ (stream_id * 0xD1B54A32D192ED03ULL));
  return seeded(mix.next());
}

// --- hashing ---------------------------------------------------------------

void hash_indices(ByteView key, const Salt& salt, std::uint32_t k, std::uint64_t m_bits,
                  std::vector<std::uint64_t>& out) {
  out.clear();
  if (m_bits == 0) throw std::invalid_argument("hash_indices: m_bits must be at least 1");
  const auto [h1, h2] = keyed_hash(key, salt);
  std::uint64_t g = h1;
  for (std::uint32_t i = 0; i < k; ++i) {
    out.push_back(g % m_bits);
    g += h2;
  }
}

std::vector<std::uint64_t> hash_indices(ByteView key, const Salt& salt, std::uint32_t k,
                                        std::uint64_t m_bits) {
  std::vector<std::uint64_t> out;
  out.reserve(k);
  hash_indices(key, salt, k, m_bits, out);
  return out;
}

// --- BloomFilter -------------------------------------------------------------

BloomFilter::BloomFilter(FilterParams params, SaltSource salts)
    : params_(params), salts_(std::move(salts)), words_((params.m_bits + 63) / 64, 0) {
  salt_ = salts_.next();
}

BloomFilter::BloomFilter(FilterParams params, Salt initial, SaltSource salts)
    : params_(params), salts_(std::move(salts)), salt_(initial),
      words_((params.m_bits + 63) / 64, 0) {}

void BloomFilter::insert(ByteView key) {
  const auto [h1, h2] = keyed_hash(key, salt_);
  const std::uint64_t m = params_.m_bits;
  std::uint64_t g = h1;
  for (std::uint32_t i = 0; i < params_.k; ++i) {
    set_bit(g % m);
    g += h2;
  }
  ++inserted_;
}

bool BloomFilter::contains(ByteView key) const {
  const auto [h1, h2] = keyed_hash(key, salt_);
  const std::uint64_t m = params_.m_bits;
  std::uint64_t g = h1;
  for (std::uint32_t i = 0; i < params_.k; ++i) {
    if (!test_bit(g % m)) return false;
    g += h2;
  }
  return true;
}

void BloomFilter::clear() {
  std::fill(words_.begin(), words_.end(), 0);
  inserted_ = 0;
  salt_ = salts_.next();
}

std::uint64_t BloomFilter::popcount() const noexcept {
  std::uint64_t total = 0;
  for (auto w : words_) total += static_cast<std::uint64_t>(std::popcount(w));
  return total;
}

double BloomFilter::fill_ratio() const noexcept {
  return static_cast<double>(popcount()) / static_cast<double>(params_.m_bits);
}

void BloomFilter::save(std::ostream& out) const {
  out.write(kSnapshotMagic.data(), kSnapshotMagic.size());
  write_le(out, params_.m_bits, 8);
  write_le(out, params_.k, 1);
  out.write(reinterpret_cast<const char*>(salt_.bytes.data()), salt_.bytes.size());
  write_le(out, inserted_, 8);
  const std::uint64_t nbytes = (params_.m_bits + 7) / 8;
  for (std::uint64_t i = 0; i < nbytes; ++i) {
    out.put(static_cast<char>((words_[i / 8] >> (8 * (i % 8))) & 0xFF));
  }
  if (!out) throw SnapshotError("failed writing filter snapshot");
}

BloomFilter BloomFilter::load(std::istream& in, SaltSource salts) {
  std::array<char, 16> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kSnapshotMagic)
    throw SnapshotError("not a filter snapshot (bad magic)");
  const std::uint64_t m = read_le(in, 8);
  const auto k = static_cast<std::uint32_t>(read_le(in, 1));
  Salt salt;
  in.read(reinterpret_cast<char*>(salt.bytes.data()), salt.bytes.size());
  if (in.gcount() != 16) throw SnapshotError("truncated filter snapshot");
  const std::uint64_t inserted = read_le(in, 8);

  FilterParams params;
  try {
    params = FilterParams::make(m, k, std::max<std::uint64_t>(inserted, 1));
  } catch (const std::invalid_argument& e) {
    throw SnapshotError(std::string("invalid snapshot header: ") + e.what());
  }
  BloomFilter f(params, salt, std::move(salts));
  const std::uint64_t nbytes = (m + 7) / 8;
  for (std::uint64_t i = 0; i < nbytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw SnapshotError("truncated filter snapshot");
    f.words_[i / 8] |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(c)) << (8 * (i % 8));
  }
  if (m % 64 != 0 && (f.words_.back() >> (m % 64)) != 0)
    throw SnapshotError("snapshot has bits set beyond m_bits");
  f.inserted_ = inserted;
  return f;
}

// --- DecayingBloomFilter ---------------------------------------------------

DecayingBloomFilter::DecayingBloomFilter(FilterParams params, std::uint32_t decay_d,
                                         SaltSource salts, std::uint64_t rng_seed)
    : inner_(params, std::move(salts)), decay_d_(decay_d), rng_(rng_seed) {}

void DecayingBloomFilter::insert(ByteView key) {
  const std::uint64_t m = inner_.params().m_bits;
  for (std::uint32_t i = 0; i < decay_d_; ++i) inner_.reset_bit(rng_.below(m));
  inner_.insert(key);
}

// --- FilterChain -----------------------------------------------------------

FilterChain::FilterChain(FilterParams segment_params, std::uint64_t capacity_per_segment,
                         std::uint32_t max_segments, SaltSource salts, bool evict_oldest)
    : params_(segment_params), capacity_(capacity_per_segment), max_segments_(max_segments),
      salts_(std::move(salts)), evict_oldest_(evict_oldest) {
  if (capacity_ == 0) throw std::invalid_argument("chain capacity must be at least 1");
  if (max_segments_ == 0) throw std::invalid_argument("chain needs at least one segment");
}

void FilterChain::open_segment() {
  if (segments_.size() >= max_segments_) {
    if (!evict_oldest_) throw CapacityExhausted("filter chain is full and eviction is disabled");
    rotate();
  }
  segments_.emplace_back(params_, salts_.fork(segments_.size() + evictions_));
}

void FilterChain::insert(ByteView key) {
  if (segments_.empty() || segments_.back().inserted_count() >= capacity_) open_segment();
  segments_.back().insert(key);
}

bool FilterChain::contains(ByteView key) const {
  for (auto it = segments_.rbegin(); it != segments_.rend(); ++it) {
    if (it->contains(key)) return true;
  }
  return false;
}

void FilterChain::rotate() {
  if (segments_.empty()) return;
  segments_.pop_front();
  ++evictions_;
}

void FilterChain::advance() {
  if (segments_.empty() || segments_.back().inserted_count() == 0) return;
  if (segments_.size() >= max_segments_) rotate();
  segments_.emplace_back(params_, salts_.fork(segments_.size() + evictions_));
}

void FilterChain::clear() {
  evictions_ += segments_.size();
  segments_.clear();
}

std::uint64_t FilterChain::memory_bytes() const noexcept {
  std::uint64_t total = 0;
  for (const auto& s : segments_) total += s.memory_bytes();
  return total;
}

}  // namespace neonpool
