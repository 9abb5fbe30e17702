#pragma once

#include "neonpool/filters.hpp"
#include "neonpool/txmodel.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace testutil {

using Key = std::array<std::uint8_t, 32>;

inline Key key_from(neonpool::SplitMix64& rng) {
  Key k{};
  for (int w = 0; w < 4; ++w) {
    const std::uint64_t v = rng.next();
    for (int i = 0; i < 8; ++i) k[8 * w + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  return k;
}

inline std::vector<Key> keys(std::size_t n, std::uint64_t seed) {
  neonpool::SplitMix64 rng(seed);
  std::vector<Key> out(n);
  for (auto& k : out) k = key_from(rng);
  return out;
}

// Distinct hash per integer; byte 0..7 carry the id.
inline neonpool::TxHash h(std::uint64_t id) {
  neonpool::TxHash t{};
  for (int i = 0; i < 8; ++i) t[i] = static_cast<std::uint8_t>(id >> (8 * i));
  t[31] = 0xA5;
  return t;
}

inline neonpool::Salt counting_salt() {
  neonpool::Salt s;
  for (int i = 0; i < 16; ++i) s.bytes[i] = static_cast<std::uint8_t>(i);
  return s;
}

// Replays a fixed event list.
class VectorSource final : public neonpool::EventSource {
 public:
  explicit VectorSource(std::vector<neonpool::TraceEvent> events) : events_(std::move(events)) {}
  std::optional<neonpool::TraceEvent> next() override {
    if (pos_ >= events_.size()) return std::nullopt;
    return events_[pos_++];
  }

 private:
  std::vector<neonpool::TraceEvent> events_;
  std::size_t pos_ = 0;
};

}  // namespace testutil
