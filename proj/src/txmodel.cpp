#include "neonpool/txmodel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>

namespace neonpool {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

BtcTxKey btc_tx_key(const BtcTransaction& tx) { return tx.txid; }

BtcInputKey btc_input_key(const BtcInput& input) {
  BtcInputKey key{};
  std::copy(input.input_tx_hash.begin(), input.input_tx_hash.end(), key.begin());
  for (int i = 0; i < 4; ++i) key[32 + i] = static_cast<std::uint8_t>(input.index >> (8 * i));
  return key;
}

EthAccountKey eth_account_key(const Address& sender, std::uint64_t nonce) {
  EthAccountKey key{};
  std::copy(sender.begin(), sender.end(), key.begin());
  for (int i = 0; i < 8; ++i) key[20 + i] = static_cast<std::uint8_t>(nonce >> (8 * i));
  return key;
}

EthAccountKey eth_account_key(const EthTransaction& tx) {
  return eth_account_key(tx.sender, tx.nonce);
}

std::string to_hex(const std::uint8_t* data, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(n * 2, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = digits[data[i] >> 4];
    s[2 * i + 1] = digits[data[i] & 0xF];
  }
  return s;
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

void from_hex(std::string_view hex, std::uint8_t* out, std::size_t n, std::string_view field) {
  if (hex.size() != 2 * n) {
    throw std::invalid_argument("field '" + std::string(field) + "': expected " +
                                std::to_string(2 * n) + " hex chars (" + std::to_string(n) +
                                " bytes), got " + std::to_string(hex.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0)
      throw std::invalid_argument("field '" + std::string(field) + "': invalid hex character");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
}

std::string wei_to_string(Wei v) {
  if (v == 0) return "0";
  std::string s;
  while (v != 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

Wei wei_from_string(std::string_view s) {
  if (s.empty() || s.size() > 39) throw std::invalid_argument("amount: not a 128-bit decimal");
  Wei v = 0;
  const Wei max = ~static_cast<Wei>(0);
  for (char c : s) {
    if (c < '0' || c > '9') throw std::invalid_argument("amount: not a decimal string");
    const auto d = static_cast<unsigned>(c - '0');
    if (v > (max - d) / 10) throw std::invalid_argument("amount: exceeds 128 bits");
    v = v * 10 + d;
  }
  return v;
}

TraceParseError::TraceParseError(std::uint64_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

// --- parsing ---------------------------------------------------------------

namespace {

const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) throw std::invalid_argument(std::string("missing field '") + name + "'");
  return *it;
}

std::uint64_t get_u64(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw std::invalid_argument(std::string("field '") + name + "': expected unsigned integer");
  return v.get<std::uint64_t>();
}

std::uint32_t get_u32(const json& obj, const char* name) {
  const auto v = get_u64(obj, name);
  if (v > 0xFFFFFFFFULL)
    throw std::invalid_argument(std::string("field '") + name + "': exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

const std::string& get_str(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_string()) throw std::invalid_argument(std::string("field '") + name + "': expected string");
  return v.get_ref<const std::string&>();
}

template <std::size_t N>
std::array<std::uint8_t, N> get_hex(const json& obj, const char* name) {
  std::array<std::uint8_t, N> out{};
  from_hex(get_str(obj, name), out.data(), N, name);
  return out;
}

bool get_bool(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_boolean()) throw std::invalid_argument(std::string("field '") + name + "': expected boolean");
  return v.get<bool>();
}

TraceEvent parse_object(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  TraceEvent ev;
  ev.seq = get_u64(j, "seq");
  ev.ts_ms = get_u64(j, "ts_ms");
  const std::string& kind = get_str(j, "kind");
  if (kind == "announce") {
    ev.kind = Announce{get_hex<32>(j, "txid")};
  } else if (kind == "tx") {
    const std::string& chain = get_str(j, "chain");
    if (chain == "btc") {
      BtcTransaction tx;
      tx.txid = get_hex<32>(j, "txid");
      const json& inputs = field(j, "inputs");
      if (!inputs.is_array() || inputs.empty())
        throw std::invalid_argument("field 'inputs': expected non-empty array");
      tx.inputs.reserve(inputs.size());
      for (const auto& in : inputs) {
        if (!in.is_object()) throw std::invalid_argument("field 'inputs': expected objects");
        tx.inputs.push_back({get_hex<32>(in, "hash"), get_u32(in, "index")});
      }
      tx.raw_size_bytes = get_u32(j, "size");
      if (tx.raw_size_bytes < 60) throw std::invalid_argument("field 'size': below 60 bytes");
      tx.valid = get_bool(j, "valid");
      ev.kind = std::move(tx);
    } else if (chain == "eth") {
      EthTransaction tx;
      tx.hash = get_hex<32>(j, "hash");
      tx.sender = get_hex<20>(j, "sender");
      tx.nonce = get_u64(j, "nonce");
      tx.amount = wei_from_string(get_str(j, "amount"));
      tx.raw_size_bytes = get_u32(j, "size");
      if (tx.raw_size_bytes < 100) throw std::invalid_argument("field 'size': below 100 bytes");
      tx.valid = get_bool(j, "valid");
      ev.kind = tx;
    } else {
      throw std::invalid_argument("field 'chain': unknown chain '" + chain + "'");
    }
  } else if (kind == "block") {
    const json& ids = field(j, "txids");
    if (!ids.is_array()) throw std::invalid_argument("field 'txids': expected array");
    Block b;
    b.txids.reserve(ids.size());
    for (const auto& id : ids) {
      if (!id.is_string()) throw std::invalid_argument("field 'txids': expected strings");
      TxHash h{};
      from_hex(id.get_ref<const std::string&>(), h.data(), h.size(), "txids");
      b.txids.push_back(h);
    }
    ev.kind = std::move(b);
  } else if (kind == "expire") {
    ev.kind = EgressExpire{get_hex<32>(j, "txid")};
  } else {
    throw std::invalid_argument("unknown kind '" + kind + "'");
  }
  return ev;
}

}  // namespace

TraceEvent parse_trace_line(std::string_view line, std::uint64_t line_no) {
  json j;
  try {
    j = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    throw TraceParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  try {
    return parse_object(j);
  } catch (const std::invalid_argument& e) {
    throw TraceParseError(line_no, e.what());
  } catch (const json::exception& e) {
    throw TraceParseError(line_no, e.what());
  }
}

// --- serialization ---------------------------------------------------------

namespace {

struct Serializer {
  ojson& j;
  void operator()(const Announce& a) const {
    j["kind"] = "announce";
    j["txid"] = to_hex(a.txid);
  }
  void operator()(const BtcTransaction& tx) const {
    j["kind"] = "tx";
    j["chain"] = "btc";
    j["txid"] = to_hex(tx.txid);
    ojson inputs = ojson::array();
    for (const auto& in : tx.inputs) {
      ojson o;
      o["hash"] = to_hex(in.input_tx_hash);
      o["index"] = in.index;
      inputs.push_back(std::move(o));
    }
    j["inputs"] = std::move(inputs);
    j["size"] = tx.raw_size_bytes;
    j["valid"] = tx.valid;
  }
  void operator()(const EthTransaction& tx) const {
    j["kind"] = "tx";
    j["chain"] = "eth";
    j["hash"] = to_hex(tx.hash);
    j["sender"] = to_hex(tx.sender);
    j["nonce"] = tx.nonce;
    j["amount"] = wei_to_string(tx.amount);
    j["size"] = tx.raw_size_bytes;
    j["valid"] = tx.valid;
  }
  void operator()(const Block& b) const {
    j["kind"] = "block";
    ojson ids = ojson::array();
    for (const auto& h : b.txids) ids.push_back(to_hex(h));
    j["txids"] = std::move(ids);
  }
  void operator()(const EgressExpire& e) const {
    j["kind"] = "expire";
    j["txid"] = to_hex(e.txid);
  }
};

}  // namespace

std::string serialize_trace_event(const TraceEvent& ev) {
  ojson j;
  j["seq"] = ev.seq;
  j["ts_ms"] = ev.ts_ms;
  std::visit(Serializer{j}, ev.kind);
  return j.dump();
}

// --- streams ---------------------------------------------------------------

std::optional<TraceEvent> TraceReader::next() {
  while (std::getline(in_, buf_)) {
    ++line_;
    if (!buf_.empty() && buf_.back() == '\r') buf_.pop_back();
    if (std::all_of(buf_.begin(), buf_.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    TraceEvent ev = parse_trace_line(buf_, line_);
    if (last_seq_ && ev.seq <= *last_seq_)
      throw TraceParseError(line_, "seq " + std::to_string(ev.seq) +
                                       " does not increase (previous " +
                                       std::to_string(*last_seq_) + ")");
    if (last_seq_ && ev.ts_ms < last_ts_)
      throw TraceParseError(line_, "ts_ms " + std::to_string(ev.ts_ms) + " decreases");
    last_seq_ = ev.seq;
    last_ts_ = ev.ts_ms;
    return ev;
  }
  if (in_.bad()) throw std::runtime_error("I/O error while reading trace");
  return std::nullopt;
}

void TraceWriter::write(const TraceEvent& ev) {
  out_ << serialize_trace_event(ev) << '\n';
  if (!out_) throw std::runtime_error("I/O error while writing trace");
  ++written_;
}

}  // namespace neonpool
