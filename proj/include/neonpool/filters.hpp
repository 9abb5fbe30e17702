#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace neonpool {

using ByteView = std::span<const std::uint8_t>;

// Dimensioning for a bloom filter: m cells, k hashes, sized for n_design keys.
struct FilterParams {
  std::uint64_t m_bits = 1;
  std::uint8_t k = 1;
  std::uint64_t n_design = 1;
  double p_theory = 0.0;

  // Validates the fields and fills p_theory from the closed-form estimate.
  static FilterParams make(std::uint64_t m_bits, std::uint32_t k, std::uint64_t n_design);

  bool operator==(const FilterParams&) const = default;
};

// (1 - e^{-kn/m})^k; 0 for an empty set. Throws std::invalid_argument for m = 0 or k = 0.
[[nodiscard]] double theoretical_fpr(std::uint64_t m_bits, std::uint64_t n, std::uint64_t k);

// ceil(-n ln p / (ln 2)^2). Throws for p outside (0,1) or n = 0.
[[nodiscard]] std::uint64_t required_size(std::uint64_t n, double p_target);

// round((m/n) ln 2), never below 1. Throws for n = 0.
[[nodiscard]] std::uint32_t optimal_k(std::uint64_t m_bits, std::uint64_t n);

// Fixed size, optimal k.
[[nodiscard]] FilterParams dimension_for_size(std::uint64_t n, std::uint64_t m_bits);
// Size from a target false positive rate, optimal k for that size.
[[nodiscard]] FilterParams dimension_for_target(std::uint64_t n, double p_target);

struct Salt {
  std::array<std::uint8_t, 16> bytes{};
  bool operator==(const Salt&) const = default;
};

// SplitMix64. One 64-bit word of state; used wherever a reproducible stream is needed.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound) by multiply-shift; bound must be non-zero.
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

  [[nodiscard]] std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// Produces fresh salts: from a seeded stream (reproducible runs) or system entropy.
class SaltSource {
 public:
  static SaltSource seeded(std::uint64_t seed) { return SaltSource(seed); }
  static SaltSource entropy() { return SaltSource(std::nullopt); }

  Salt next();
  // Derives an independent source for a sub-component (e.g. second filter of a node).
  SaltSource fork(std::uint64_t stream_id);

  [[nodiscard]] bool deterministic() const noexcept { return stream_.has_value(); }

 private:
  explicit SaltSource(std::optional<std::uint64_t> seed);
  std::optional<SplitMix64> stream_;
};

// k cell indices for `key`: i-th index is (h1 + i*h2) mod m_bits in 64-bit wrapping
// arithmetic, where (h1, h2) are the little-endian halves of SipHash-2-4-128 keyed by
// the salt, and h2 is forced odd.
void hash_indices(ByteView key, const Salt& salt, std::uint32_t k, std::uint64_t m_bits,
                  std::vector<std::uint64_t>& out);
[[nodiscard]] std::vector<std::uint64_t> hash_indices(ByteView key, const Salt& salt,
                                                      std::uint32_t k, std::uint64_t m_bits);

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BloomFilter {
 public:
  BloomFilter(FilterParams params, SaltSource salts);
  // Fixed initial salt; later clears draw from `salts`.
  BloomFilter(FilterParams params, Salt initial, SaltSource salts);

  void insert(ByteView key);
  [[nodiscard]] bool contains(ByteView key) const;
  // Zeroes all cells, resets the count and draws a new salt.
  void clear();

  [[nodiscard]] const FilterParams& params() const noexcept { return params_; }
  [[nodiscard]] const Salt& salt() const noexcept { return salt_; }
  [[nodiscard]] std::uint64_t inserted_count() const noexcept { return inserted_; }
  [[nodiscard]] std::uint64_t popcount() const noexcept;
  [[nodiscard]] double fill_ratio() const noexcept;
  // Bytes held by the cell array.
  [[nodiscard]] std::uint64_t memory_bytes() const noexcept { return words_.size() * 8; }

  [[nodiscard]] bool test_bit(std::uint64_t idx) const noexcept {
    return (words_[idx >> 6] >> (idx & 63)) & 1U;
  }
  void set_bit(std::uint64_t idx) noexcept { words_[idx >> 6] |= (1ULL << (idx & 63)); }
  void reset_bit(std::uint64_t idx) noexcept { words_[idx >> 6] &= ~(1ULL << (idx & 63)); }

  // Snapshot layout: "NEONPOOLFILTER\0\0", u64 m_bits, u8 k, 16-byte salt,
  // u64 inserted_count, ceil(m/8) bytes of cells (LSB-first). Integers little-endian.
  void save(std::ostream& out) const;
  static BloomFilter load(std::istream& in, SaltSource salts = SaltSource::entropy());

 private:
  FilterParams params_;
  SaltSource salts_;
  Salt salt_;
  std::vector<std::uint64_t> words_;
  std::uint64_t inserted_ = 0;
};

// Standard filter that clears `decay_d` uniformly random cells before every insertion.
class DecayingBloomFilter {
 public:
  DecayingBloomFilter(FilterParams params, std::uint32_t decay_d, SaltSource salts,
                      std::uint64_t rng_seed);

  void insert(ByteView key);
  [[nodiscard]] bool contains(ByteView key) const { return inner_.contains(key); }
  void clear() { inner_.clear(); }

  [[nodiscard]] const BloomFilter& inner() const noexcept { return inner_; }
  [[nodiscard]] std::uint32_t decay_d() const noexcept { return decay_d_; }

 private:
  BloomFilter inner_;
  std::uint32_t decay_d_;
  SplitMix64 rng_;
};

class CapacityExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered list of equally sized filters. Inserts go to the newest segment; a new
// segment (fresh salt) is opened once the newest holds capacity_per_segment keys.
class FilterChain {
 public:
  FilterChain(FilterParams segment_params, std::uint64_t capacity_per_segment,
              std::uint32_t max_segments, SaltSource salts, bool evict_oldest = true);

  // Throws CapacityExhausted when a segment is needed, max_segments are live and
  // eviction is disabled.
  void insert(ByteView key);
  [[nodiscard]] bool contains(ByteView key) const;
  // Drops the oldest segment.
  void rotate();
  // Seals the newest segment and starts a fresh one, dropping the oldest when full.
  void advance();
  void clear();

  [[nodiscard]] const std::deque<BloomFilter>& segments() const noexcept { return segments_; }
  [[nodiscard]] std::uint64_t capacity_per_segment() const noexcept { return capacity_; }
  [[nodiscard]] std::uint32_t max_segments() const noexcept { return max_segments_; }
  [[nodiscard]] std::uint64_t memory_bytes() const noexcept;
  [[nodiscard]] std::uint64_t evictions() const noexcept { return evictions_; }

 private:
  void open_segment();

  FilterParams params_;
  std::uint64_t capacity_;
  std::uint32_t max_segments_;
  SaltSource salts_;
  bool evict_oldest_;
  std::deque<BloomFilter> segments_;
  std::uint64_t evictions_ = 0;
};

}  // namespace neonpool
