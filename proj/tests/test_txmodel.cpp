#include "neonpool/txmodel.hpp"

#include "support.hpp"

#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

using namespace neonpool;
using testutil::h;

namespace {

const std::string kHex64(64, 'a');

TraceEvent random_event(std::mt19937_64& rng, std::uint64_t seq) {
  auto hash = [&] {
    TxHash t{};
    for (auto& b : t) b = static_cast<std::uint8_t>(rng());
    return t;
  };
  TraceEvent ev;
  ev.seq = seq;
  ev.ts_ms = 1'700'000'000'000ULL + seq * 7;
  switch (rng() % 5) {
    case 0: ev.kind = Announce{hash()}; break;
    case 1: {
      BtcTransaction tx;
      tx.txid = hash();
      const auto n = 1 + rng() % 4;
      for (std::uint64_t i = 0; i < n; ++i) tx.inputs.push_back({hash(), static_cast<std::uint32_t>(rng())});
      tx.raw_size_bytes = 60 + static_cast<std::uint32_t>(rng() % 100'000);
      tx.valid = rng() % 2 == 0;
      ev.kind = tx;
      break;
    }
    case 2: {
      EthTransaction tx;
      tx.hash = hash();
      for (auto& b : tx.sender) b = static_cast<std::uint8_t>(rng());
      tx.nonce = rng();
      tx.amount = (static_cast<Wei>(rng()) << 64) | rng();
      tx.raw_size_bytes = 100 + static_cast<std::uint32_t>(rng() % 100'000);
      tx.valid = rng() % 2 == 0;
      ev.kind = tx;
      break;
    }
    case 3: {
      Block b;
      const auto n = rng() % 5;
      for (std::uint64_t i = 0; i < n; ++i) b.txids.push_back(hash());
      ev.kind = b;
      break;
    }
    default: ev.kind = EgressExpire{hash()}; break;
  }
  return ev;
}

}  // namespace

TEST_CASE("btc tx key") {
  BtcTransaction tx;
  CHECK(btc_tx_key(tx) == BtcTxKey{});
  tx.txid = h(1);
  BtcTransaction other;
  other.txid = h(2);
  CHECK(btc_tx_key(tx) != btc_tx_key(other));
  CHECK(btc_tx_key(tx).size() == 32);
}

TEST_CASE("btc input key") {
  CHECK(btc_input_key({TxHash{}, 0}) == BtcInputKey{});
  const auto k1 = btc_input_key({TxHash{}, 1});
  BtcInputKey expect{};
  expect[32] = 1;
  CHECK(k1 == expect);
  const auto k = btc_input_key({h(9), 0x01020304});
  CHECK(k[32] == 0x04);
  CHECK(k[35] == 0x01);
  CHECK(btc_input_key({h(9), 0}) != btc_input_key({h(9), 1}));
}

TEST_CASE("eth account key") {
  CHECK(eth_account_key(Address{}, 0) == EthAccountKey{});
  Address a{};
  a[0] = 7;
  CHECK(eth_account_key(a, 5) != eth_account_key(a, 6));
  const auto k = eth_account_key(a, 0x0102);
  CHECK(k.size() == 28);
  CHECK(k[0] == 7);
  CHECK(k[20] == 0x02);
  CHECK(k[21] == 0x01);
  EthTransaction tx;
  tx.sender = a;
  tx.nonce = 0x0102;
  CHECK(eth_account_key(tx) == k);
}

TEST_CASE("key encodings are injective on random inputs") {
  std::mt19937_64 rng(3);
  std::set<BtcInputKey> inputs;
  std::set<EthAccountKey> accounts;
  std::set<std::pair<TxHash, std::uint32_t>> in_domain;
  std::set<std::pair<Address, std::uint64_t>> acct_domain;
  for (int i = 0; i < 5'000; ++i) {
    // Small value ranges force many near-collisions in the domain.
    TxHash t{};
    t[rng() % 32] = static_cast<std::uint8_t>(rng() % 3);
    const auto idx = static_cast<std::uint32_t>(rng() % 4);
    in_domain.insert({t, idx});
    inputs.insert(btc_input_key({t, idx}));
    Address a{};
    a[rng() % 20] = static_cast<std::uint8_t>(rng() % 3);
    const std::uint64_t nonce = rng() % 4;
    acct_domain.insert({a, nonce});
    accounts.insert(eth_account_key(a, nonce));
  }
  CHECK(inputs.size() == in_domain.size());
  CHECK(accounts.size() == acct_domain.size());
}

TEST_CASE("hex and wei helpers") {
  const TxHash t = h(0xABCD);
  const std::string hex = to_hex(t);
  CHECK(hex.size() == 64);
  CHECK(hex.substr(0, 4) == "cdab");
  TxHash back{};
  from_hex(hex, back.data(), back.size(), "txid");
  CHECK(back == t);
  std::string upper = hex;
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  from_hex(upper, back.data(), back.size(), "txid");
  CHECK(back == t);
  CHECK_THROWS_WITH_AS(from_hex(std::string(62, 'a'), back.data(), 32, "txid"),
                       doctest::Contains("txid"), std::invalid_argument);
  CHECK_THROWS_AS(from_hex(std::string(63, 'a') + "g", back.data(), 32, "txid"), std::invalid_argument);

  const Wei big = (static_cast<Wei>(0xFFFFFFFFFFFFFFFFULL) << 64) | 0xFFFFFFFFFFFFFFFFULL;
  CHECK(wei_to_string(big) == "340282366920938463463374607431768211455");
  CHECK(wei_from_string("340282366920938463463374607431768211455") == big);
  CHECK(wei_to_string(0) == "0");
  CHECK_THROWS_AS((void)wei_from_string("340282366920938463463374607431768211456"), std::invalid_argument);
  CHECK_THROWS_AS((void)wei_from_string("12a"), std::invalid_argument);
  CHECK_THROWS_AS((void)wei_from_string(""), std::invalid_argument);
}

TEST_CASE("trace line round trip") {
  BtcTransaction tx;
  tx.txid = h(1);
  tx.inputs = {{h(2), 0}, {h(3), 7}};
  tx.raw_size_bytes = 250;
  const TraceEvent ev{5, 1000, tx};
  const std::string line = serialize_trace_event(ev);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.rfind(R"({"seq":5,"ts_ms":1000,"kind":"tx","chain":"btc","txid":")", 0) == 0);
  CHECK(parse_trace_line(line) == ev);

  std::mt19937_64 rng(17);
  for (std::uint64_t i = 1; i <= 10'000; ++i) {
    const TraceEvent e = random_event(rng, i);
    REQUIRE(parse_trace_line(serialize_trace_event(e)) == e);
  }
}

TEST_CASE("trace line schema") {
  const auto ann = parse_trace_line(R"({"seq":1,"ts_ms":2,"kind":"announce","txid":")" + kHex64 + "\"}");
  CHECK(std::holds_alternative<Announce>(ann.kind));
  const auto eth = parse_trace_line(
      R"({"seq":3,"ts_ms":4,"kind":"tx","chain":"eth","hash":")" + kHex64 +
      R"(","sender":")" + std::string(40, 'b') + R"(","nonce":9,"amount":"1000000000000000000000","size":120,"valid":false})");
  const auto& e = std::get<EthTransaction>(eth.kind);
  CHECK(e.nonce == 9);
  CHECK(e.amount == static_cast<Wei>(1'000'000'000'000'000'000ULL) * 1000);
  CHECK_FALSE(e.valid);
  const auto blk = parse_trace_line(R"({"seq":5,"ts_ms":6,"kind":"block","txids":[]})");
  CHECK(std::get<Block>(blk.kind).txids.empty());
  const auto exp = parse_trace_line(R"({"seq":7,"ts_ms":8,"kind":"expire","txid":")" + kHex64 + "\"}");
  CHECK(std::holds_alternative<EgressExpire>(exp.kind));
}

TEST_CASE("trace line errors") {
  const std::string short_hash(62, 'a');
  CHECK_THROWS_WITH_AS((void)parse_trace_line(R"({"seq":1,"ts_ms":2,"kind":"announce","txid":")" + short_hash + "\"}", 12),
                       doctest::Contains("txid"), TraceParseError);
  try {
    (void)parse_trace_line("{not json", 42);
    FAIL("expected a parse error");
  } catch (const TraceParseError& e) {
    CHECK(e.line() == 42);
    CHECK(std::string(e.what()).find("line 42") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS((void)parse_trace_line(R"({"seq":1,"ts_ms":2,"kind":"ping"})"),
                       doctest::Contains("ping"), TraceParseError);
  CHECK_THROWS_AS((void)parse_trace_line(R"({"seq":1,"ts_ms":2,"kind":"tx","chain":"btc","txid":")" + kHex64 +
                                         R"(","inputs":[],"size":100,"valid":true})"),
                  TraceParseError);
  CHECK_THROWS_WITH_AS((void)parse_trace_line(R"({"seq":1,"ts_ms":2,"kind":"tx","chain":"btc","txid":")" + kHex64 +
                                              R"(","inputs":[{"hash":")" + kHex64 + R"(","index":0}],"size":59,"valid":true})"),
                       doctest::Contains("size"), TraceParseError);
  CHECK_THROWS_AS((void)parse_trace_line(R"({"seq":-1,"ts_ms":2,"kind":"block","txids":[]})"), TraceParseError);
}

TEST_CASE("trace reader") {
  SUBCASE("empty input") {
    std::istringstream in("");
    TraceReader r(in);
    CHECK_FALSE(r.next().has_value());
  }
  SUBCASE("blank lines skipped, events in order") {
    std::istringstream in("\n" + serialize_trace_event({1, 10, Block{}}) + "\n\n" +
                          serialize_trace_event({2, 10, Block{}}) + "\r\n");
    TraceReader r(in);
    CHECK(r.next()->seq == 1);
    CHECK(r.next()->seq == 2);
    CHECK_FALSE(r.next().has_value());
  }
  SUBCASE("decreasing seq reported with line number") {
    std::istringstream in(serialize_trace_event({2, 10, Block{}}) + "\n" + serialize_trace_event({2, 11, Block{}}) + "\n");
    TraceReader r(in);
    (void)r.next();
    try {
      (void)r.next();
      FAIL("expected an error");
    } catch (const TraceParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("decreasing ts rejected") {
    std::istringstream in(serialize_trace_event({1, 10, Block{}}) + "\n" + serialize_trace_event({2, 9, Block{}}) + "\n");
    TraceReader r(in);
    (void)r.next();
    CHECK_THROWS_AS((void)r.next(), TraceParseError);
  }
  SUBCASE("writer output reads back") {
    std::ostringstream out;
    TraceWriter w(out);
    std::mt19937_64 rng(5);
    std::vector<TraceEvent> evs;
    for (std::uint64_t i = 1; i <= 200; ++i) evs.push_back(random_event(rng, i));
    for (const auto& e : evs) w.write(e);
    CHECK(w.written() == 200);
    std::istringstream in(out.str());
    TraceReader r(in);
    for (const auto& e : evs) CHECK(*r.next() == e);
    CHECK_FALSE(r.next().has_value());
  }
}
