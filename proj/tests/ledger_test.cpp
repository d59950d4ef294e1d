#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "faasim/ledger/ledger.hpp"

using namespace faasim;
using namespace faasim::ledger;

namespace {

Address addr(const std::string& label) {
  return crypto::address_from_label(label);
}

Permission perm(bool get, bool put, bool post, bool del) {
  Permission p;
  p.get = get;
  p.put = put;
  p.post = post;
  p.del = del;
  return p;
}

logstore::Receipt stub_receipt(const Address& gateway, const Address& user,
                               uint64_t ws, uint64_t we, int64_t fee) {
  logstore::Receipt r;
  r.gateway = gateway;
  r.user = user;
  r.window_start = ws;
  r.window_end = we;
  r.total_fee = fee;
  return r;
}

const Ledger::ReceiptVerifier kAlwaysValid =
    [](const logstore::Receipt&) { return logstore::ReceiptCheck{true, ""}; };

}  // namespace

TEST_CASE("permission mask matches its bits for every method") {
  for (int bits = 0; bits < 16; ++bits) {
    Permission p = perm(bits & 1, bits & 2, bits & 4, bits & 8);
    CHECK(p.allows(HttpMethod::Get) == bool(bits & 1));
    CHECK(p.allows(HttpMethod::Put) == bool(bits & 2));
    CHECK(p.allows(HttpMethod::Post) == bool(bits & 4));
    CHECK(p.allows(HttpMethod::Delete) == bool(bits & 8));
    CHECK(p.any() == (bits != 0));
  }
}

TEST_CASE("time only moves forward") {
  Ledger led;
  CHECK(led.now() == 0);
  led.advance_time(5);
  led.advance_time(5);
  CHECK(led.now() == 5);
  CHECK_THROWS_AS(led.advance_time(4), std::invalid_argument);
}

TEST_CASE("accounts are unique and queryable") {
  Ledger led;
  Address a = addr("a");
  led.create_account(a, 50);
  CHECK(led.balance(a) == 50);
  CHECK(led.find_account(a) != nullptr);
  CHECK(led.find_account(addr("b")) == nullptr);
  CHECK(led.balance(addr("b")) == 0);
  CHECK_THROWS_AS(led.create_account(a, 1), std::invalid_argument);
}

TEST_CASE("block hashes chain over parent and state digest") {
  // hashes verified against an independent Python implementation of
  // sha256(height_be64 || parent || state_digest)
  Ledger led;
  const Block& b0 = led.append_block(crypto::sha256("state0"));
  CHECK(b0.height == 0);
  CHECK(b0.parent_hash == kZeroHash);
  CHECK(to_hex(b0.hash) ==
        "d91c9852f4441b159ffa116c161ced40843c664bc06d49a5bc1ed063c01c0b2a");

  const Block& b1 = led.append_block(crypto::sha256("state1"));
  CHECK(b1.height == 1);
  CHECK(b1.parent_hash == b0.hash);
  CHECK(to_hex(b1.hash) ==
        "d18c8d6b5e2f05806e1b0b8771fd1634d235d481e154a3b3a4e825a26afcc1bc");

  CHECK(led.chain_height() == 2);
  CHECK(led.beacon(0) == b0.hash);
  CHECK(led.beacon(1) == b1.hash);
  CHECK(led.block_at(1).parent_hash == b0.hash);
  CHECK_THROWS_AS(led.beacon(2), std::out_of_range);
}

TEST_CASE("gateway registration locks stake and enforces limits") {
  LedgerConfig cfg;
  cfg.min_stake = 10;
  cfg.gateway_quota_per_dc = 2;
  Ledger led(cfg);
  Address p = addr("provider");
  led.create_account(p, 100);
  led.register_data_center("dc0");

  CHECK_THROWS_AS(led.register_gateway(p, "dc0", 9), std::invalid_argument);
  CHECK_THROWS_AS(led.register_gateway(p, "nowhere", 10),
                  std::invalid_argument);
  CHECK_THROWS_AS(led.register_gateway(addr("stranger"), "dc0", 10),
                  std::out_of_range);

  int64_t before = led.total_tokens();
  uint64_t g1 = led.register_gateway(p, "dc0", 30);
  CHECK(led.balance(p) == 70);
  CHECK(led.find_stake(p)->staked == 30);
  CHECK(led.total_tokens() == before);

  uint64_t g2 = led.register_gateway(p, "dc0", 30);
  CHECK(g2 == g1 + 1);
  CHECK(led.find_stake(p)->staked == 60);
  CHECK_THROWS_WITH_AS(led.register_gateway(p, "dc0", 10),
                       "gateway quota exceeded for dc0",
                       std::invalid_argument);
  CHECK_THROWS_AS(led.register_gateway(p, "dc0", 50), std::invalid_argument);

  CHECK(led.gateways().at(g1).data_center == "dc0");
  CHECK(led.gateways().at(g1).provider == p);
}

TEST_CASE("endpoint registry resolves providers and data centers") {
  Ledger led;
  Address p = addr("provider");
  led.create_account(p, 100);
  led.register_data_center("dc1");
  led.register_data_center("dc0");
  led.register_gateway(p, "dc1", 10);
  led.register_gateway(p, "dc0", 10);

  led.register_endpoint(p, "/fn/a", true);
  CHECK_THROWS_AS(led.register_endpoint(p, "/fn/a", false),
                  std::invalid_argument);

  auto res = led.resolve_endpoint("/fn/a");
  REQUIRE(res.provider.has_value());
  CHECK(*res.provider == p);
  CHECK(res.data_centers == std::vector<std::string>{"dc0", "dc1"});

  auto missing = led.resolve_endpoint("/fn/none");
  CHECK_FALSE(missing.provider.has_value());
  CHECK(missing.data_centers.empty());

  CHECK(led.find_endpoint("/fn/a") != nullptr);
  CHECK(led.find_endpoint("/fn/a")->is_public);
  CHECK(led.find_endpoint("/fn/none") == nullptr);
}

TEST_CASE("access control truth table") {
  Ledger led;
  Address provider = addr("provider");
  Address user = addr("user");
  led.register_endpoint(provider, "/open", true);
  led.register_endpoint(provider, "/closed", false);

  for (HttpMethod m : kAllMethods) {
    CHECK(led.check_access(user, "/open", m));
    CHECK(led.check_access(provider, "/open", m));
    CHECK(led.check_access(provider, "/closed", m));
    CHECK_FALSE(led.check_access(user, "/closed", m));
  }

  for (int bits = 0; bits < 16; ++bits) {
    Permission p = perm(bits & 1, bits & 2, bits & 4, bits & 8);
    led.set_permission(provider, user, "/closed", p);
    CHECK(led.check_access(user, "/closed", HttpMethod::Get) == bool(bits & 1));
    CHECK(led.check_access(user, "/closed", HttpMethod::Put) == bool(bits & 2));
    CHECK(led.check_access(user, "/closed", HttpMethod::Post) ==
          bool(bits & 4));
    CHECK(led.check_access(user, "/closed", HttpMethod::Delete) ==
          bool(bits & 8));
  }

  // permissions are per subject: another user stays locked out
  CHECK_FALSE(led.check_access(addr("other"), "/closed", HttpMethod::Get));
  CHECK_THROWS_AS(led.check_access(user, "/ghost", HttpMethod::Get),
                  std::out_of_range);
  CHECK_THROWS_AS(
      led.set_permission(addr("impostor"), user, "/closed", perm(1, 0, 0, 0)),
      std::invalid_argument);
}

TEST_CASE("access tokens cover issue, verify, expire and transfer") {
  Ledger led;
  Address provider = addr("provider");
  Address user = addr("user");
  led.register_endpoint(provider, "/api", false);
  led.set_permission(provider, user, "/api", perm(1, 0, 1, 0));
  led.advance_time(100);

  CHECK_THROWS_AS(led.issue_access_token(user, "/api", perm(1, 0, 0, 0), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(led.issue_access_token(user, "/api", perm(0, 0, 0, 0), 10),
                  std::invalid_argument);
  // the mask may not exceed what the subject can already reach
  CHECK_THROWS_AS(led.issue_access_token(user, "/api", perm(1, 1, 0, 0), 10),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      led.issue_access_token(addr("other"), "/api", perm(1, 0, 0, 0), 10),
      std::invalid_argument);

  AccessGrant grant = led.issue_access_token(user, "/api", perm(1, 0, 1, 0), 50);
  CHECK(grant.issued_at == 100);
  CHECK(grant.expires_at == 150);
  CHECK(grant.endpoint_digest == crypto::sha256("/api"));
  CHECK(led.token_owner(grant.token_id) == user);

  // valid strictly before expiry, dead at the expiry instant and beyond
  CHECK(led.verify_access_token(grant, 100, HttpMethod::Get));
  CHECK(led.verify_access_token(grant, 149, HttpMethod::Get));
  CHECK(led.verify_access_token(grant, 149, HttpMethod::Post));
  CHECK_FALSE(led.verify_access_token(grant, 150, HttpMethod::Get));
  CHECK_FALSE(led.verify_access_token(grant, 151, HttpMethod::Get));
  CHECK_FALSE(led.verify_access_token(grant, 120, HttpMethod::Put));
  CHECK_FALSE(led.verify_access_token(grant, 120, HttpMethod::Delete));

  // forged ids and tampered fields fail
  AccessGrant forged = grant;
  forged.token_id = 999;
  CHECK_FALSE(led.verify_access_token(forged, 120, HttpMethod::Get));
  AccessGrant retarget = grant;
  retarget.endpoint_digest = crypto::sha256("/elsewhere");
  CHECK_FALSE(led.verify_access_token(retarget, 120, HttpMethod::Get));

  // transferring ownership invalidates the original holder's grant
  led.transfer_access_token(grant.token_id, addr("buyer"));
  CHECK(led.token_owner(grant.token_id) == addr("buyer"));
  CHECK_FALSE(led.verify_access_token(grant, 120, HttpMethod::Get));
  CHECK_THROWS_AS(led.transfer_access_token(12345, addr("x")),
                  std::out_of_range);
  CHECK_FALSE(led.token_owner(12345).has_value());
}

TEST_CASE("billing deposits set the watermark") {
  LedgerConfig cfg;
  cfg.watermark_fraction = 0.8;
  Ledger led(cfg);
  Address user = addr("user");

  CHECK_THROWS_AS(led.deposit_billing(user, -1), std::invalid_argument);
  CHECK_THROWS_AS(led.accrue_usage(user, 1), std::out_of_range);

  const BillingAccount& acct = led.deposit_billing(user, 1000);
  CHECK(acct.deposit == 1000);
  CHECK(acct.watermark == 800);
  led.deposit_billing(user, 5);
  CHECK(led.find_billing(user)->deposit == 1005);
  CHECK(led.find_billing(user)->watermark == 804);

  CHECK(led.accrue_usage(user, 30) == 30);
  CHECK(led.accrue_usage(user, 12) == 42);
  CHECK(led.find_billing(addr("nobody")) == nullptr);
}

TEST_CASE("receipt settlement moves deposit to the gateway") {
  Ledger led;
  Address gw = addr("gateway");
  Address user = addr("user");
  led.deposit_billing(user, 500);
  led.accrue_usage(user, 120);

  int64_t before = led.total_tokens();
  led.settle_receipt(stub_receipt(gw, user, 0, 9, 120), 120, kAlwaysValid);
  CHECK(led.find_billing(user)->deposit == 380);
  CHECK(led.find_billing(user)->accrued == 0);
  CHECK(led.find_billing(user)->watermark == 304);
  CHECK(led.balance(gw) == 120);
  CHECK(led.total_tokens() == before);
}

TEST_CASE("receipt settlement rejects bad input") {
  Ledger led;
  Address gw = addr("gateway");
  Address user = addr("user");
  led.deposit_billing(user, 100);

  const Ledger::ReceiptVerifier reject = [](const logstore::Receipt&) {
    return logstore::ReceiptCheck{false, "tampered entry"};
  };
  CHECK_THROWS_WITH_AS(
      led.settle_receipt(stub_receipt(gw, user, 0, 9, 10), 10, reject),
      "unverifiable receipt: tampered entry", std::invalid_argument);
  CHECK_THROWS_AS(led.settle_receipt(stub_receipt(gw, addr("ghost"), 0, 9, 10),
                                     10, kAlwaysValid),
                  std::out_of_range);
  CHECK_THROWS_AS(
      led.settle_receipt(stub_receipt(gw, user, 0, 9, 101), 101, kAlwaysValid),
      std::invalid_argument);
}

TEST_CASE("settled windows refuse to overlap") {
  Ledger led;
  Address gw = addr("gateway");
  Address user = addr("user");
  led.deposit_billing(user, 1000);

  led.settle_receipt(stub_receipt(gw, user, 10, 19, 5), 5, kAlwaysValid);
  for (auto [s, e] : std::vector<std::pair<uint64_t, uint64_t>>{
           {10, 19}, {19, 25}, {0, 10}, {15, 17}, {5, 30}}) {
    CHECK_THROWS_WITH_AS(
        led.settle_receipt(stub_receipt(gw, user, s, e, 5), 5, kAlwaysValid),
        "receipt window overlaps a settled window", std::invalid_argument);
  }
  // adjacent windows and other parties are fine
  led.settle_receipt(stub_receipt(gw, user, 20, 29, 5), 5, kAlwaysValid);
  led.settle_receipt(stub_receipt(gw, user, 0, 9, 5), 5, kAlwaysValid);
  led.settle_receipt(stub_receipt(addr("gw2"), user, 10, 19, 5), 5,
                     kAlwaysValid);
}

TEST_CASE("disputes gate slashing") {
  Ledger led;
  Address p = addr("provider");
  led.create_account(p, 100);
  led.register_data_center("dc0");
  led.register_gateway(p, "dc0", 40);

  uint64_t d = led.open_dispute(addr("user"), p, 77);
  CHECK(led.find_dispute(d)->outcome == DisputeOutcome::Open);
  CHECK(led.find_dispute(d)->call_id == 77);

  CHECK_THROWS_AS(led.apply_slash(p, 10, d), std::invalid_argument);
  CHECK_THROWS_AS(led.resolve_dispute(d, DisputeOutcome::Rejected, 10),
                  std::invalid_argument);
  CHECK_THROWS_AS(led.resolve_dispute(999, DisputeOutcome::Upheld, 10),
                  std::out_of_range);

  led.resolve_dispute(d, DisputeOutcome::Upheld, 10);
  CHECK_THROWS_AS(led.apply_slash(p, 41, d), std::invalid_argument);
  CHECK_THROWS_AS(led.apply_slash(addr("ghost"), 1, d), std::invalid_argument);

  int64_t before = led.total_tokens();
  led.apply_slash(p, 10, d);
  CHECK(led.find_stake(p)->staked == 30);
  CHECK(led.find_stake(p)->slashed_total == 10);
  CHECK(led.find_dispute(d)->settled);
  // slashed tokens are burned
  CHECK(led.total_tokens() == before - 10);
}

TEST_CASE("load feed is overwritten in place") {
  Ledger led;
  CHECK(led.load_feed().queue_by_dc.empty());
  led.publish_load_feed({{"dc0", 4}}, 2);
  CHECK(led.load_feed().queue_by_dc.at("dc0") == 4);
  CHECK(led.load_feed().height == 2);
  led.publish_load_feed({{"dc1", 7}}, 3);
  CHECK(led.load_feed().queue_by_dc.count("dc0") == 0);
  CHECK(led.load_feed().height == 3);
}

namespace {

Ledger build_rich_ledger() {
  LedgerConfig cfg;
  cfg.min_stake = 5;
  cfg.gateway_quota_per_dc = 3;
  cfg.watermark_fraction = 0.75;
  cfg.cycle_length = 50;
  Ledger led(cfg);
  led.advance_time(12);
  Address p = addr("provider");
  Address u = addr("user");
  led.create_account(p, 200);
  led.register_data_center("dc0");
  led.register_data_center("dc1");
  led.register_gateway(p, "dc0", 20);
  led.register_gateway(p, "dc1", 20);
  led.append_block(crypto::sha256("s0"));
  led.append_block(crypto::sha256("s1"));
  led.register_endpoint(p, "/fn/demo", false);
  led.set_permission(p, u, "/fn/demo", perm(1, 0, 1, 0));
  led.issue_access_token(u, "/fn/demo", perm(1, 0, 0, 0), 40);
  led.deposit_billing(u, 300);
  led.accrue_usage(u, 25);
  led.settle_receipt(stub_receipt(addr("gwaddr"), u, 0, 9, 25), 25,
                     kAlwaysValid);
  uint64_t d = led.open_dispute(u, p, 5);
  led.resolve_dispute(d, DisputeOutcome::Upheld, 3);
  led.apply_slash(p, 3, d);
  led.publish_load_feed({{"dc0", 2}, {"dc1", 0}}, 1);
  return led;
}

}  // namespace

TEST_CASE("canonical json round-trips the full state") {
  Ledger led = build_rich_ledger();
  std::string text = led.to_json_string();
  Ledger back = Ledger::from_json_string(text);
  CHECK(back.to_json_string() == text);
  CHECK(back.state_digest() == led.state_digest());

  // restored state behaves, not just serializes: the settled window ledger
  // still rejects an overlap
  CHECK_THROWS_AS(
      back.settle_receipt(stub_receipt(addr("gwaddr"), addr("user"), 5, 6, 1),
                          1, kAlwaysValid),
      std::invalid_argument);
  CHECK(back.now() == 12);
  CHECK(back.chain_height() == 2);
  CHECK(back.balance(addr("gwaddr")) == 25);
}

TEST_CASE("state digest is reproducible and change-sensitive") {
  Ledger a = build_rich_ledger();
  Ledger b = build_rich_ledger();
  CHECK(a.state_digest() == b.state_digest());
  b.advance_time(13);
  CHECK(a.state_digest() != b.state_digest());

  Ledger c = build_rich_ledger();
  c.deposit_billing(addr("user"), 1);
  CHECK(a.state_digest() != c.state_digest());
}
