#include "neonpool/pipeline.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace neonpool;
using testutil::h;

namespace {

BtcTransaction btc(std::uint64_t id, std::vector<BtcInput> inputs) {
  BtcTransaction tx;
  tx.txid = h(id);
  tx.inputs = std::move(inputs);
  tx.raw_size_bytes = 200;
  return tx;
}

EthTransaction eth(std::uint64_t id, std::uint8_t sender, std::uint64_t nonce) {
  EthTransaction tx;
  tx.hash = h(id);
  tx.sender[0] = sender;
  tx.nonce = nonce;
  tx.raw_size_bytes = 150;
  return tx;
}

PipelineConfig btc_config(ExpiryPolicy policy = ExpiryPolicy::none(), std::uint64_t m_bits = 8'000'000) {
  PipelineConfig c;
  c.chain = Chain::Btc;
  c.filter.m_bits = m_bits;
  c.policy = policy;
  c.seed = 11;
  return c;
}

struct Funded {
  ChainState chain;
  Funded() {
    std::vector<TxHash> funding;
    for (std::uint64_t i = 1000; i < 1100; ++i) funding.push_back(h(i));
    chain.confirm_block(funding);
  }
};

constexpr std::uint64_t kHour = 3'600'000;

}  // namespace

TEST_CASE("policy tokens") {
  CHECK(ExpiryPolicy::parse("none") == ExpiryPolicy::none());
  CHECK(ExpiryPolicy::parse("h24") == ExpiryPolicy::hours(24));
  CHECK(ExpiryPolicy::parse("c400k") == ExpiryPolicy::count(400'000));
  CHECK(ExpiryPolicy::parse("c2m") == ExpiryPolicy::count(2'000'000));
  CHECK(ExpiryPolicy::parse("d128") == ExpiryPolicy::decay(128));
  CHECK(ExpiryPolicy::count(400'000).label() == "c400000");
  for (const char* bad : {"", "h", "x5", "h0", "c12q", "d-1"})
    CHECK_THROWS_AS(ExpiryPolicy::parse(bad), std::invalid_argument);
}

TEST_CASE("pipeline config json") {
  const auto j = nlohmann::json::parse(
      R"({"chain":"eth","filter":{"kind":"chain","m_bits":1000000,"k":5,"capacity":1000,"max_segments":3},
          "policy":{"kind":"count","value":1000},"orphan_capacity":7,"seed":3})");
  const auto c = PipelineConfig::from_json(j);
  CHECK(c.chain == Chain::Eth);
  CHECK(c.n_design == 700'000);
  CHECK(c.filter.kind == FilterSpec::Kind::Chain);
  CHECK(c.filter.max_segments == 3);
  CHECK(c.policy == ExpiryPolicy::count(1000));
  CHECK(c.orphan_capacity == 7);
  CHECK(*c.seed == 3);
  const auto back = PipelineConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.filter == c.filter);
  CHECK(back.policy == c.policy);
  CHECK(back.seed == c.seed);

  SUBCASE("decay policy implies a decaying filter") {
    const auto d = PipelineConfig::from_json(nlohmann::json::parse(R"({"policy":{"kind":"decay","value":64}})"));
    CHECK(d.filter.kind == FilterSpec::Kind::Decaying);
    CHECK(d.filter.decay_d == 64);
    CHECK(d.n_design == 400'000);
    CHECK(d.filter_params().k == 14);
  }
  SUBCASE("invalid configs") {
    for (const char* bad : {R"([])", R"({"filter":{"kind":"cuckoo"}})", R"({"policy":{"kind":"weekly"}})",
                            R"({"policy":{"kind":"hours","value":0}})", R"({"filter":{"m_bits":0}})",
                            R"({"filter":{"kind":"exact"},"policy":{"kind":"decay","value":8}})",
                            R"({"chain":"ltc"})", R"({"n_design":"many"})"})
      CHECK_THROWS_AS(PipelineConfig::from_json(nlohmann::json::parse(bad)), std::invalid_argument);
  }
}

TEST_CASE("btc announce and relay") {
  Funded f;
  NeonpoolBtc node(btc_config(), &f.chain);
  const auto a = btc(1, {{h(1000), 0}, {h(1001), 2}});
  CHECK(node.on_announce(a.txid) == IngressDecision::FetchTx);
  CHECK(node.on_tx(a) == IngressDecision::Relay);
  CHECK(node.on_announce(a.txid) == IngressDecision::DropDuplicate);
  CHECK(node.on_tx(a) == IngressDecision::DropDuplicate);
  for (const auto& in : a.inputs) CHECK(node.ds_tx().contains(btc_input_key(in)));
  CHECK(node.bloom_tx().contains(a.txid));
  CHECK(node.count_since_reset() == 1);
}

TEST_CASE("btc double spend and invalid") {
  Funded f;
  NeonpoolBtc node(btc_config(), &f.chain);
  CHECK(node.on_tx(btc(1, {{h(1000), 0}})) == IngressDecision::Relay);
  CHECK(node.on_tx(btc(2, {{h(1002), 0}, {h(1000), 0}})) == IngressDecision::DropDoubleSpend);
  CHECK(node.on_announce(h(2)) == IngressDecision::DropDuplicate);
  CHECK_FALSE(node.ds_tx().contains(btc_input_key({h(1002), 0})));
  auto bad = btc(3, {{h(1003), 0}});
  bad.valid = false;
  CHECK(node.on_tx(bad) == IngressDecision::DropInvalid);
  CHECK(node.on_announce(h(3)) == IngressDecision::DropDuplicate);
  f.chain.observe(btc(4, {{h(1004), 0}}), 0);
  f.chain.confirm_block({h(4)});
  CHECK(node.on_tx(btc(5, {{h(1004), 0}})) == IngressDecision::DropInvalid);
  CHECK(node.count_since_reset() == 1);
}

TEST_CASE("btc orphan handling") {
  Funded f;
  NeonpoolBtc node(btc_config(), &f.chain);
  const auto parent = btc(1, {{h(1000), 0}});
  const auto child = btc(2, {{h(1), 0}});
  CHECK(node.on_tx(child) == IngressDecision::Orphaned);
  CHECK(node.orphans().contains(child.txid));
  CHECK(node.on_announce(child.txid) == IngressDecision::DropDuplicate);
  CHECK(node.on_tx(child) == IngressDecision::DropDuplicate);
  CHECK(node.on_tx(parent) == IngressDecision::Relay);
  REQUIRE(node.released().size() == 1);
  CHECK(node.released()[0].txid == child.txid);
  CHECK(node.released()[0].decision == IngressDecision::Relay);
  CHECK(node.orphans().size() == 0);
  CHECK(node.bloom_tx().contains(child.txid));

  SUBCASE("parent already relayed means no orphaning") {
    CHECK(node.on_tx(btc(3, {{h(1), 1}})) == IngressDecision::Relay);
  }
  SUBCASE("released by a confirming block") {
    const auto waiting = btc(3, {{h(77), 0}});
    CHECK(node.on_tx(waiting) == IngressDecision::Orphaned);
    f.chain.confirm_block({h(77)});
    node.on_block({h(77)});
    REQUIRE(node.released().size() == 1);
    CHECK(node.released()[0].decision == IngressDecision::Relay);
  }
  SUBCASE("evicted orphans are still remembered") {
    PipelineConfig cfg = btc_config();
    cfg.orphan_capacity = 2;
    NeonpoolBtc small(cfg, &f.chain);
    for (std::uint64_t i = 0; i < 5; ++i) CHECK(small.on_tx(btc(30 + i, {{h(60 + i), 0}})) == IngressDecision::Orphaned);
    CHECK(small.orphans().size() == 2);
    CHECK_FALSE(small.orphans().contains(h(30)));
    CHECK(small.on_announce(h(30)) == IngressDecision::DropDuplicate);
  }
  SUBCASE("a parked parent does not resolve its children") {
    CHECK(node.on_tx(btc(40, {{h(41), 0}})) == IngressDecision::Orphaned);
    CHECK(node.on_tx(btc(42, {{h(40), 0}})) == IngressDecision::Orphaned);
    CHECK(node.on_tx(btc(41, {{h(1006), 0}})) == IngressDecision::Relay);
    REQUIRE(node.released().size() == 2);
    CHECK(node.released()[0].txid == h(40));
    CHECK(node.released()[1].txid == h(42));
  }
  SUBCASE("chained orphans release transitively") {
    const auto c1 = btc(10, {{h(20), 0}});
    const auto c2 = btc(11, {{h(10), 0}});
    CHECK(node.on_tx(c2) == IngressDecision::Orphaned);
    CHECK(node.on_tx(c1) == IngressDecision::Orphaned);
    CHECK(node.on_tx(btc(20, {{h(1005), 0}})) == IngressDecision::Relay);
    CHECK(node.released().size() == 2);
  }
}

TEST_CASE("eth decisions") {
  ChainState chain;
  PipelineConfig cfg = btc_config();
  cfg.chain = Chain::Eth;
  NeonpoolEth node(cfg, &chain);
  CHECK(node.on_tx(eth(1, 1, 0)) == IngressDecision::Relay);
  CHECK(node.on_tx(eth(2, 1, 0)) == IngressDecision::DropDoubleSpend);
  CHECK(node.on_tx(eth(1, 1, 0)) == IngressDecision::DropDuplicate);
  CHECK(node.on_tx(eth(3, 1, 1)) == IngressDecision::Relay);
  auto invalid = eth(4, 2, 0);
  invalid.valid = false;
  CHECK(node.on_tx(invalid) == IngressDecision::DropInvalid);
  chain.observe(eth(9, 3, 5), 0);
  chain.confirm_block({h(9)});
  CHECK(node.on_tx(eth(5, 3, 5)) == IngressDecision::DropInvalid);
  CHECK(node.on_tx(eth(6, 3, 6)) == IngressDecision::Relay);
  CHECK_THROWS_AS(NeonpoolBtc(cfg, &chain), std::invalid_argument);
  CHECK_THROWS_AS(NeonpoolEth(btc_config(), &chain), std::invalid_argument);
}

TEST_CASE("hourly reset") {
  Funded f;
  NeonpoolBtc node(btc_config(ExpiryPolicy::hours(24)), &f.chain);
  const std::uint64_t t0 = 1'700'000'000'000ULL;
  node.apply_policy(t0);
  CHECK(node.on_tx(btc(1, {{h(1000), 0}})) == IngressDecision::Relay);
  int resets = 0;
  for (std::uint64_t t = t0; t <= t0 + 25 * kHour; t += 60'000) resets += node.apply_policy(t) ? 1 : 0;
  CHECK(resets == 1);
  CHECK(node.resets() == 1);
  CHECK(node.on_announce(h(1)) == IngressDecision::FetchTx);
  CHECK(node.on_tx(btc(2, {{h(1000), 0}})) == IngressDecision::Relay);
  CHECK_FALSE(node.apply_policy(t0 - kHour));  // time never runs backwards
}

TEST_CASE("count reset") {
  ChainState chain;
  PipelineConfig cfg = btc_config(ExpiryPolicy::count(400'000));
  cfg.chain = Chain::Eth;
  cfg.filter.kind = FilterSpec::Kind::Exact;
  NeonpoolEth node(cfg, &chain);
  for (std::uint64_t i = 0; i < 399'999; ++i) REQUIRE(node.on_tx(eth(i, static_cast<std::uint8_t>(i), i)) == IngressDecision::Relay);
  CHECK(node.resets() == 0);
  CHECK(node.on_tx(eth(399'999, 1, 399'999)) == IngressDecision::Relay);
  CHECK(node.resets() == 1);
  CHECK(node.count_since_reset() == 0);
  CHECK(node.on_tx(eth(0, 0, 0)) == IngressDecision::Relay);
}

TEST_CASE("no expiry never resets") {
  Funded f;
  NeonpoolBtc node(btc_config(), &f.chain);
  for (std::uint64_t t = 0; t <= 100 * kHour; t += kHour) CHECK_FALSE(node.apply_policy(t));
  for (std::uint64_t i = 0; i < 1000; ++i) node.on_tx(btc(10 + i, {{h(1000 + i % 100), static_cast<std::uint32_t>(i)}}));
  CHECK(node.resets() == 0);
}

TEST_CASE("exact filter never errs") {
  Funded f;
  PipelineConfig cfg = btc_config();
  cfg.filter.kind = FilterSpec::Kind::Exact;
  NeonpoolBtc node(cfg, &f.chain);
  for (std::uint64_t i = 0; i < 5000; ++i) {
    REQUIRE(node.on_announce(h(10 + i)) == IngressDecision::FetchTx);
    REQUIRE(node.on_tx(btc(10 + i, {{h(1000 + i % 100), static_cast<std::uint32_t>(i)}})) == IngressDecision::Relay);
  }
  CHECK_FALSE(node.bloom_tx().current_salt().has_value());
  CHECK(node.bloom_tx().memory_bytes() == 5000 * 32);
}

TEST_CASE("chain filter rotates on count policy") {
  Funded f;
  PipelineConfig cfg = btc_config(ExpiryPolicy::count(100), 100'000);
  cfg.filter.kind = FilterSpec::Kind::Chain;
  cfg.filter.capacity = 1'000'000;
  cfg.filter.max_segments = 2;
  NeonpoolBtc node(cfg, &f.chain);
  for (std::uint64_t i = 0; i < 100; ++i) node.on_tx(btc(10 + i, {{h(1000), static_cast<std::uint32_t>(i)}}));
  CHECK(node.resets() == 1);
  // The previous generation survives one rotation.
  CHECK(node.on_announce(h(10)) == IngressDecision::DropDuplicate);
  for (std::uint64_t i = 0; i < 100; ++i) node.on_tx(btc(500 + i, {{h(1001), static_cast<std::uint32_t>(i)}}));
  CHECK(node.resets() == 2);
  CHECK(node.on_announce(h(500)) == IngressDecision::DropDuplicate);
}

TEST_CASE("decaying pipeline keeps fresh entries") {
  Funded f;
  NeonpoolBtc node(btc_config(ExpiryPolicy::decay(128), 1'000'000), &f.chain);
  for (std::uint64_t i = 0; i < 10'000; ++i) {
    REQUIRE(node.on_tx(btc(10 + i, {{h(1000 + i % 100), static_cast<std::uint32_t>(i)}})) == IngressDecision::Relay);
    REQUIRE(node.on_announce(h(10 + i)) == IngressDecision::DropDuplicate);
  }
}

TEST_CASE("seeded pipelines agree") {
  Funded f;
  NeonpoolBtc a(btc_config(ExpiryPolicy::none(), 50'000), &f.chain);
  NeonpoolBtc b(btc_config(ExpiryPolicy::none(), 50'000), &f.chain);
  CHECK(a.bloom_tx().current_salt() == b.bloom_tx().current_salt());
  CHECK(a.bloom_tx().current_salt() != a.ds_tx().current_salt());
  for (std::uint64_t i = 0; i < 20'000; ++i) {
    const auto tx = btc(10 + i, {{h(1000 + i % 100), static_cast<std::uint32_t>(i)}});
    REQUIRE(a.on_tx(tx) == b.on_tx(tx));
  }
}
