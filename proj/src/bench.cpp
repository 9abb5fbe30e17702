#include "neonpool/replay.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace neonpool {

namespace {

using Key = std::array<std::uint8_t, 32>;
using Clock = std::chrono::steady_clock;

constexpr std::size_t kQuerySet = 65'536;
constexpr std::size_t kInsertBatch = 4'096;

volatile std::uint64_t sink = 0;  // keeps the query loop from being optimised away

std::vector<Key> random_keys(std::size_t n, SplitMix64& rng) {
  std::vector<Key> keys(n);
  for (auto& k : keys) {
    for (int w = 0; w < 4; ++w) {
      const std::uint64_t v = rng.next();
      for (int i = 0; i < 8; ++i) k[8 * w + i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
  }
  return keys;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Half members, half fresh keys, interleaved.
double time_queries(const BloomFilter& f, const std::vector<Key>& members, std::uint64_t ops,
                    SplitMix64& rng) {
  std::vector<Key> probes = random_keys(kQuerySet, rng);
  for (std::size_t i = 0; i < probes.size(); i += 2) {
    probes[i] = members[static_cast<std::size_t>(rng.below(members.size()))];
  }
  std::uint64_t hits = 0;
  const auto t0 = Clock::now();
  for (std::uint64_t i = 0; i < ops; ++i) hits += f.contains(probes[i % kQuerySet]) ? 1 : 0;
  const double s = seconds_since(t0);
  sink = hits;
  return s * 1e9 / static_cast<double>(ops);
}

// Inserts are timed in batches; the filter is restored between batches so the load
// stays at the measured point.
double time_inserts(BloomFilter& f, std::uint64_t ops, SplitMix64& rng) {
  const BloomFilter saved = f;
  const std::vector<Key> fresh = random_keys(kInsertBatch, rng);
  double total = 0.0;
  std::uint64_t done = 0;
  while (done < ops) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(kInsertBatch, ops - done));
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < n; ++i) f.insert(fresh[i]);
    total += seconds_since(t0);
    done += n;
    f = saved;
  }
  return total * 1e9 / static_cast<double>(ops);
}

}  // namespace

std::vector<BenchRow> bench_filter(const BenchOptions& opts) {
  if (opts.ops == 0) throw std::invalid_argument("bench: ops must be positive");
  if (opts.sizes_bytes.empty() || opts.k_list.empty() || opts.loads.empty())
    throw std::invalid_argument("bench: sizes, k list and loads must be non-empty");
  if (opts.repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
  for (double l : opts.loads) {
    if (!(l > 0.0 && l <= 1.0)) throw std::invalid_argument("bench: loads must lie in (0, 1]");
  }
  std::vector<double> loads = opts.loads;
  std::sort(loads.begin(), loads.end());
  loads.erase(std::unique(loads.begin(), loads.end()), loads.end());

  std::vector<BenchRow> rows;
  for (std::uint64_t size : opts.sizes_bytes) {
    if (size == 0) throw std::invalid_argument("bench: sizes must be positive");
    const std::size_t first_row = rows.size();
    for (std::uint32_t k : opts.k_list) {
      const FilterParams params = FilterParams::make(size * 8, k, opts.n_design);
      SplitMix64 rng(opts.seed ^ (size * 0x9E3779B97F4A7C15ULL) ^ k);
      BloomFilter filter(params, SaltSource::seeded(rng.next()));
      std::vector<Key> members;
      for (double load : loads) {
        const auto target = static_cast<std::size_t>(load * static_cast<double>(opts.n_design));
        if (target > members.size()) {
          auto more = random_keys(target - members.size(), rng);
          for (const auto& key : more) filter.insert(key);
          members.insert(members.end(), more.begin(), more.end());
        }
        if (members.empty()) members = random_keys(1, rng);
        BenchRow row;
        row.k = k;
        row.m_bits = params.m_bits;
        row.load_fraction = load;
        row.ns_per_query = 1e300;
        row.ns_per_insert = 1e300;
        for (int r = 0; r < opts.repeats; ++r) {
          row.ns_per_query = std::min(row.ns_per_query, time_queries(filter, members, opts.ops, rng));
          row.ns_per_insert = std::min(row.ns_per_insert, time_inserts(filter, opts.ops, rng));
        }
        rows.push_back(row);
      }
    }
    auto cost = [](const BenchRow& r) { return r.ns_per_query + r.ns_per_insert; };
    const std::size_t n_loads = loads.size();
    for (std::size_t i = first_row; i < rows.size(); ++i) {
      const std::size_t ki = (i - first_row) / n_loads;
      const std::size_t li = (i - first_row) % n_loads;
      rows[i].k_ratio = ki == 0 ? 1.0 : cost(rows[i]) / cost(rows[i - n_loads]);
      rows[i].load_ratio = cost(rows[i]) / cost(rows[i - li]);
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "k,m_bits,load_fraction,ns_per_query,ns_per_insert,k_ratio,load_ratio\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%u,%llu,%.2f,%.2f,%.2f,%.4f,%.4f\n", r.k,
                  static_cast<unsigned long long>(r.m_bits), r.load_fraction, r.ns_per_query,
                  r.ns_per_insert, r.k_ratio, r.load_ratio);
    out += buf;
  }
  return out;
}

}  // namespace neonpool
