#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "faasim/logstore/logstore.hpp"

using namespace faasim;
using namespace faasim::logstore;

namespace {

const Address kAlice = crypto::address_from_label("user:alice");
const Hash32 kAliceKey = crypto::key_from_label("user:alice");
const Hash32 kEndpoint = crypto::sha256("endpoint:/fn/demo");
const Hash32 kStoreKey = crypto::key_from_label("gwlog:test");

KeyRegistry registry() { return {{kAlice, kAliceKey}}; }

std::vector<ProcessedRequest> sample_requests(RequestSigner& signer,
                                              size_t count) {
  std::vector<ProcessedRequest> out;
  for (size_t i = 0; i < count; ++i) {
    ProcessedRequest p;
    p.request = signer.sign(100 + i, kEndpoint, i + 1, int64_t(i) + 2);
    p.tick = 10 + i;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("request signatures match fixed vectors") {
  // signatures verified against an independent Python hmac implementation
  CHECK(to_hex(kAlice) ==
        "d37f9b053a48b17efb3400aeb597f09dba0e425a6ca46d12d36664f57b152f16");
  CHECK(to_hex(kAliceKey) ==
        "27067d018e770815797e93ea6407878c60f70382b2619d750d0a6ac504fe448f");

  RequestSigner signer(kAlice, kAliceKey);
  SignedRequest req = signer.sign(9, kEndpoint, 1, 5);
  CHECK(to_hex(req.signature) ==
        "7d772e370df6930c9cb2d1cd370b56dfa4b39cb002d8480897f2fb328f7c360b");
  CHECK(verify_request(req, kAliceKey));

  SignedRequest neg = signer.sign(9, kEndpoint, 2, -3);
  CHECK(to_hex(neg.signature) ==
        "36f8583392a65799852cdc2c6d1bb18cf9d1fddd8a0ee02caca396767021e58d");
  CHECK(verify_request(neg, kAliceKey));
}

TEST_CASE("any mutation of a signed request breaks verification") {
  RequestSigner signer(kAlice, kAliceKey);
  SignedRequest req = signer.sign(9, kEndpoint, 1, 5);

  SignedRequest m = req;
  m.fee = 6;
  CHECK_FALSE(verify_request(m, kAliceKey));
  m = req;
  m.nonce = 2;
  CHECK_FALSE(verify_request(m, kAliceKey));
  m = req;
  m.caller = crypto::address_from_label("user:mallory");
  CHECK_FALSE(verify_request(m, kAliceKey));
  m = req;
  m.endpoint_digest = crypto::sha256("endpoint:/fn/other");
  CHECK_FALSE(verify_request(m, kAliceKey));
  m = req;
  m.signature[0] ^= 1;
  CHECK_FALSE(verify_request(m, kAliceKey));
  CHECK_FALSE(verify_request(req, crypto::key_from_label("user:mallory")));

  // the call id is transport metadata outside the signed payload
  m = req;
  m.call_id = 1234;
  CHECK(verify_request(m, kAliceKey));
}

TEST_CASE("a caller can never reuse a nonce") {
  RequestSigner signer(kAlice, kAliceKey);
  signer.sign(1, kEndpoint, 7, 1);
  CHECK_THROWS_WITH_AS(signer.sign(2, kEndpoint, 7, 1),
                       "nonce already used by this caller",
                       std::invalid_argument);
  signer.sign(2, kEndpoint, 8, 1);
  CHECK(signer.used_nonces() == std::set<uint64_t>{7, 8});
}

TEST_CASE("log entries are content addressed and reproducible") {
  // content ids verified against an independent Python AES-GCM
  // implementation of the same nonce derivation
  LogStore store(kStoreKey);
  const LogEntry& e0 = store.append(std::string("hello log"), 4);
  CHECK(to_hex(e0.content_id) ==
        "c4e994059592df6f00e0766f063b3c7df2ca68b06de12f2c0912310de8ac826f");
  CHECK(e0.created_at == 4);
  CHECK(e0.ciphertext.size() == 12 + 9 + 16);

  // the same plaintext under the next counter gets a fresh nonce
  const LogEntry& e1 = store.append(std::string("hello log"), 5);
  CHECK(to_hex(e1.content_id) ==
        "2932e6cec867afeb516e3596a6f3ef6ba7dbeccb282209a02085e09cf4ba70ed");

  const LogEntry& e2 = store.append(std::string(""), 6);
  CHECK(to_hex(e2.content_id) ==
        "642294d9fedd829cb7f792bf3f8699cca4ede522929740adefc37875046af757");

  CHECK(store.size() == 3);
  CHECK(store.counter() == 3);
  CHECK(store.contains(e0.content_id));
  CHECK_FALSE(store.contains(crypto::sha256("nope")));
  CHECK_THROWS_AS(store.get(crypto::sha256("nope")), std::out_of_range);
}

TEST_CASE("decryption round-trips and rejects tampering") {
  LogStore store(kStoreKey);
  const LogEntry& entry = store.append(std::string("secret payload"), 1);

  auto plain = store.decrypt(entry);
  REQUIRE(plain.has_value());
  CHECK(std::string(plain->begin(), plain->end()) == "secret payload");

  LogEntry tampered = entry;
  tampered.ciphertext[14] ^= 0x40;
  CHECK_FALSE(store.decrypt(tampered).has_value());

  LogEntry truncated = entry;
  truncated.ciphertext.resize(20);
  CHECK_FALSE(store.decrypt(truncated).has_value());

  LogStore other(crypto::key_from_label("gwlog:other"));
  CHECK_FALSE(other.decrypt(entry).has_value());
}

TEST_CASE("request records round-trip through json") {
  RequestSigner signer(kAlice, kAliceKey);
  ProcessedRequest p;
  p.request = signer.sign(9, kEndpoint, 1, 5);
  p.tick = 3;
  std::string text = request_record_to_json(p);
  auto back = request_record_from_json(text);
  REQUIRE(back.has_value());
  CHECK(back->request.call_id == 9);
  CHECK(back->request.caller == kAlice);
  CHECK(back->request.nonce == 1);
  CHECK(back->request.fee == 5);
  CHECK(back->request.signature == p.request.signature);
  CHECK(back->tick == 3);

  CHECK_FALSE(request_record_from_json("not json").has_value());
  CHECK_FALSE(request_record_from_json("[1,2]").has_value());
  CHECK_FALSE(request_record_from_json("{\"call_id\":\"9\"}").has_value());
}

TEST_CASE("receipts reference encrypted request records by content id") {
  RequestSigner signer(kAlice, kAliceKey);
  ProcessedRequest p;
  p.request = signer.sign(9, kEndpoint, 1, 5);
  p.tick = 3;

  LogStore store(kStoreKey);
  Address gw = crypto::address_from_label("gw:0");
  Receipt r = build_receipt(gw, kAlice, 0, 9, {p}, store, registry());

  CHECK(r.total_fee == 5);
  CHECK(r.call_ids == std::vector<uint64_t>{9});
  REQUIRE(r.log_content_ids.size() == 1);
  // the first store entry seals exactly the canonical record json;
  // value pinned by the external oracle
  CHECK(to_hex(r.log_content_ids[0]) ==
        "6e63019e5fdcd3d90c8c5c659d107f3ab893fc09dd91685fecf5941bb81be905");
  CHECK(store.contains(r.log_content_ids[0]));

  auto check = verify_receipt(r, store, registry());
  CHECK(check.valid);
  CHECK(check.reason.empty());
}

TEST_CASE("receipt construction validates its inputs") {
  RequestSigner signer(kAlice, kAliceKey);
  auto reqs = sample_requests(signer, 3);
  Address gw = crypto::address_from_label("gw:0");

  LogStore store(kStoreKey);
  CHECK_THROWS_WITH_AS(
      build_receipt(gw, kAlice, 0, 9, reqs, store, registry()),
      "request outside the receipt window", std::invalid_argument);

  ProcessedRequest foreign = reqs[0];
  foreign.request.caller = crypto::address_from_label("user:mallory");
  CHECK_THROWS_WITH_AS(
      build_receipt(gw, kAlice, 0, 99, {foreign}, store, registry()),
      "request from a different user in receipt", std::invalid_argument);

  ProcessedRequest bad_sig = reqs[0];
  bad_sig.request.fee += 1;
  CHECK_THROWS_WITH_AS(
      build_receipt(gw, kAlice, 0, 99, {bad_sig}, store, registry()),
      "request signature does not verify", std::invalid_argument);

  auto two = std::vector<ProcessedRequest>{reqs[0], reqs[0]};
  CHECK_THROWS_WITH_AS(build_receipt(gw, kAlice, 0, 99, two, store, registry()),
                       "duplicate nonce in receipt", std::invalid_argument);

  CHECK_THROWS_WITH_AS(build_receipt(gw, kAlice, 0, 99, reqs, store, {}),
                       "no key registered for receipt user",
                       std::invalid_argument);
}

TEST_CASE("receipt verification catches every single-field lie") {
  RequestSigner signer(kAlice, kAliceKey);
  auto reqs = sample_requests(signer, 3);
  Address gw = crypto::address_from_label("gw:0");
  LogStore store(kStoreKey);
  Receipt honest = build_receipt(gw, kAlice, 0, 99, reqs, store, registry());
  CHECK(honest.total_fee == 2 + 3 + 4);
  REQUIRE(verify_receipt(honest, store, registry()).valid);

  Receipt r = honest;
  r.total_fee += 1;
  CHECK(verify_receipt(r, store, registry()).reason ==
        "total fee does not match the sum of request fees");

  r = honest;
  r.total_fee -= 1;
  CHECK_FALSE(verify_receipt(r, store, registry()).valid);

  r = honest;
  r.call_ids[1] = 999;
  CHECK(verify_receipt(r, store, registry()).reason ==
        "call id mismatch at position 1");

  r = honest;
  r.log_content_ids[0] = crypto::sha256("fabricated");
  CHECK(verify_receipt(r, store, registry()).reason.starts_with(
      "missing log entry"));

  r = honest;
  r.log_content_ids.pop_back();
  CHECK(verify_receipt(r, store, registry()).reason ==
        "call id and log entry counts differ");

  r = honest;
  std::swap(r.log_content_ids[0], r.log_content_ids[1]);
  CHECK_FALSE(verify_receipt(r, store, registry()).valid);

  // shrinking the window strands logged ticks outside it
  r = honest;
  r.window_start = 11;
  CHECK(verify_receipt(r, store, registry()).reason ==
        "logged request outside the receipt window");
  r = honest;
  r.window_end = 10;
  CHECK_FALSE(verify_receipt(r, store, registry()).valid);

  r = honest;
  r.user = crypto::address_from_label("user:mallory");
  CHECK(verify_receipt(r, store, registry()).reason ==
        "no key registered for receipt user");

  KeyRegistry swapped = {
      {kAlice, crypto::key_from_label("user:mallory")}};
  CHECK(verify_receipt(honest, store, swapped).reason ==
        "request signature does not verify");
}

TEST_CASE("duplicate nonces across entries are caught at verification") {
  // two records signed with the same nonce, spliced past the builder
  const SignatureScheme& scheme = default_scheme();
  SignedRequest a;
  a.call_id = 1;
  a.caller = kAlice;
  a.endpoint_digest = kEndpoint;
  a.nonce = 5;
  a.fee = 2;
  a.signature = scheme.sign(kAliceKey, a.signing_digest());
  SignedRequest b = a;
  b.call_id = 2;
  b.signature = scheme.sign(kAliceKey, b.signing_digest());

  LogStore store(kStoreKey);
  Receipt r;
  r.gateway = crypto::address_from_label("gw:0");
  r.user = kAlice;
  r.window_start = 0;
  r.window_end = 9;
  for (const SignedRequest& req : {a, b}) {
    ProcessedRequest p{req, 1};
    const LogEntry& entry = store.append(request_record_to_json(p), 1);
    r.call_ids.push_back(req.call_id);
    r.log_content_ids.push_back(entry.content_id);
    r.total_fee += req.fee;
  }
  CHECK(verify_receipt(r, store, registry()).reason ==
        "duplicate nonce across receipt entries");
}

TEST_CASE("no inflated fee claim survives verification over any subset") {
  RequestSigner signer(kAlice, kAliceKey);
  auto reqs = sample_requests(signer, 5);
  Address gw = crypto::address_from_label("gw:0");

  for (uint32_t mask = 0; mask < (1u << 5); ++mask) {
    std::vector<ProcessedRequest> subset;
    int64_t honest_fee = 0;
    for (size_t i = 0; i < 5; ++i) {
      if (mask & (1u << i)) {
        subset.push_back(reqs[i]);
        honest_fee += reqs[i].request.fee;
      }
    }
    LogStore store(kStoreKey);
    Receipt r = build_receipt(gw, kAlice, 0, 99, subset, store, registry());
    CHECK(r.total_fee == honest_fee);
    CHECK(verify_receipt(r, store, registry()).valid);
    for (int64_t bump : {1, 7}) {
      Receipt inflated = r;
      inflated.total_fee += bump;
      CHECK_FALSE(verify_receipt(inflated, store, registry()).valid);
    }
  }
}

TEST_CASE("receipts round-trip through json") {
  RequestSigner signer(kAlice, kAliceKey);
  auto reqs = sample_requests(signer, 2);
  LogStore store(kStoreKey);
  Receipt r = build_receipt(crypto::address_from_label("gw:0"), kAlice, 0, 99,
                            reqs, store, registry());
  Receipt back = Receipt::from_json(r.to_json());
  CHECK(back.gateway == r.gateway);
  CHECK(back.user == r.user);
  CHECK(back.window_start == r.window_start);
  CHECK(back.window_end == r.window_end);
  CHECK(back.call_ids == r.call_ids);
  CHECK(back.total_fee == r.total_fee);
  CHECK(back.log_content_ids == r.log_content_ids);
  CHECK(verify_receipt(back, store, registry()).valid);
}

TEST_CASE("export writes one file per entry plus a manifest") {
  namespace fs = std::filesystem;
  LogStore store(kStoreKey);
  const LogEntry e0 = store.append(std::string("first"), 1);
  const LogEntry e1 = store.append(std::string("second"), 2);

  fs::path dir = fs::temp_directory_path() / "faasim_logstore_export_test";
  fs::remove_all(dir);
  store.export_dir(dir);

  for (const LogEntry* e : {&e0, &e1}) {
    fs::path f = dir / (to_hex(e->content_id) + ".bin");
    REQUIRE(fs::exists(f));
    std::ifstream in(f, std::ios::binary);
    Bytes bytes((std::istreambuf_iterator<char>(in)),
                std::istreambuf_iterator<char>());
    CHECK(bytes == e->ciphertext);
  }

  std::ifstream mf(dir / "manifest.json");
  std::string manifest((std::istreambuf_iterator<char>(mf)),
                       std::istreambuf_iterator<char>());
  CHECK(manifest.find("\"counter\": \"2\"") != std::string::npos);
  CHECK(manifest.find(to_hex(e0.content_id)) != std::string::npos);
  CHECK(manifest.find(to_hex(e1.content_id)) != std::string::npos);
  fs::remove_all(dir);
}
