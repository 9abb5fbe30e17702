#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace neonpool {

using TxHash = std::array<std::uint8_t, 32>;
using Address = std::array<std::uint8_t, 20>;
using Wei = unsigned __int128;

// Hash for fixed-size byte arrays whose contents are already uniformly distributed
// (hashes, or hash-prefixed keys).
struct ByteArrayHasher {
  template <std::size_t N>
  std::size_t operator()(const std::array<std::uint8_t, N>& a) const noexcept {
    static_assert(N >= 16);
    std::uint64_t lo;
    std::uint64_t hi;
    std::memcpy(&lo, a.data(), 8);
    std::memcpy(&hi, a.data() + N - 8, 8);
    return static_cast<std::size_t>(lo ^ (hi * 0x9E3779B97F4A7C15ULL));
  }
};

struct BtcInput {
  TxHash input_tx_hash{};
  std::uint32_t index = 0;
  bool operator==(const BtcInput&) const = default;
};

struct BtcTransaction {
  TxHash txid{};
  std::vector<BtcInput> inputs;
  std::uint32_t raw_size_bytes = 60;
  bool valid = true;
  bool operator==(const BtcTransaction&) const = default;
};

struct EthTransaction {
  TxHash hash{};
  Address sender{};
  std::uint64_t nonce = 0;
  Wei amount = 0;
  std::uint32_t raw_size_bytes = 100;
  bool valid = true;
  bool operator==(const EthTransaction&) const = default;
};

struct Announce {
  TxHash txid{};
  bool operator==(const Announce&) const = default;
};

struct Block {
  std::vector<TxHash> txids;
  bool operator==(const Block&) const = default;
};

struct EgressExpire {
  TxHash txid{};
  bool operator==(const EgressExpire&) const = default;
};

// A full transaction is either BtcTransaction or EthTransaction.
using EventKind = std::variant<Announce, BtcTransaction, EthTransaction, Block, EgressExpire>;

struct TraceEvent {
  std::uint64_t seq = 0;
  std::uint64_t ts_ms = 0;
  EventKind kind;
  bool operator==(const TraceEvent&) const = default;
};

// Filter keys. Raw in-memory byte order, little-endian integers.
using BtcTxKey = std::array<std::uint8_t, 32>;
using BtcInputKey = std::array<std::uint8_t, 36>;
using EthAccountKey = std::array<std::uint8_t, 28>;

[[nodiscard]] BtcTxKey btc_tx_key(const BtcTransaction& tx);
[[nodiscard]] BtcInputKey btc_input_key(const BtcInput& input);
[[nodiscard]] EthAccountKey eth_account_key(const EthTransaction& tx);
[[nodiscard]] EthAccountKey eth_account_key(const Address& sender, std::uint64_t nonce);

// Hex helpers (lowercase on output; either case accepted on input).
[[nodiscard]] std::string to_hex(const std::uint8_t* data, std::size_t n);
template <std::size_t N>
[[nodiscard]] std::string to_hex(const std::array<std::uint8_t, N>& a) {
  return to_hex(a.data(), N);
}
// Throws std::invalid_argument mentioning `field` on bad length or characters.
void from_hex(std::string_view hex, std::uint8_t* out, std::size_t n, std::string_view field);

[[nodiscard]] std::string wei_to_string(Wei v);
[[nodiscard]] Wei wei_from_string(std::string_view s);

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::uint64_t line, const std::string& what);
  [[nodiscard]] std::uint64_t line() const noexcept { return line_; }

 private:
  std::uint64_t line_;
};

// One JSON object, no trailing newline. Throws TraceParseError (line 0 unless given).
[[nodiscard]] TraceEvent parse_trace_line(std::string_view line, std::uint64_t line_no = 0);
[[nodiscard]] std::string serialize_trace_event(const TraceEvent& ev);

// Pull interface over a stream of events; generators and file readers both implement it.
class EventSource {
 public:
  virtual ~EventSource() = default;
  virtual std::optional<TraceEvent> next() = 0;
};

// Reads JSON lines, skipping blank lines; enforces increasing seq and non-decreasing ts.
class TraceReader final : public EventSource {
 public:
  explicit TraceReader(std::istream& in) : in_(in) {}
  std::optional<TraceEvent> next() override;
  [[nodiscard]] std::uint64_t line() const noexcept { return line_; }

 private:
  std::istream& in_;
  std::string buf_;
  std::uint64_t line_ = 0;
  std::optional<std::uint64_t> last_seq_;
  std::uint64_t last_ts_ = 0;
};

class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out) : out_(out) {}
  void write(const TraceEvent& ev);
  [[nodiscard]] std::uint64_t written() const noexcept { return written_; }

 private:
  std::ostream& out_;
  std::uint64_t written_ = 0;
};

}  // namespace neonpool
