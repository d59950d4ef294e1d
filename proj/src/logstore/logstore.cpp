#include "faasim/logstore/logstore.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace faasim::logstore {

using nlohmann::json;

Hash32 SignedRequest::signing_digest() const {
  ByteWriter w;
  w.raw(caller).raw(endpoint_digest).u64(nonce).i64(fee);
  return crypto::sha256(w.bytes());
}

Hash32 KeyedDigestScheme::sign(const Hash32& key, const Hash32& digest) const {
  return crypto::hmac_sha256(key,
                             std::span<const uint8_t>(digest.data(), 32));
}

bool KeyedDigestScheme::verify(const Hash32& key, const Hash32& digest,
                               const Hash32& signature) const {
  return sign(key, digest) == signature;
}

const SignatureScheme& default_scheme() {
  static const KeyedDigestScheme scheme;
  return scheme;
}

SignedRequest RequestSigner::sign(uint64_t call_id,
                                  const Hash32& endpoint_digest,
                                  uint64_t nonce, int64_t fee) {
  if (!used_nonces_.insert(nonce).second) {
    throw std::invalid_argument("nonce already used by this caller");
  }
  SignedRequest req;
  req.call_id = call_id;
  req.caller = caller_;
  req.endpoint_digest = endpoint_digest;
  req.nonce = nonce;
  req.fee = fee;
  req.signature = scheme_->sign(key_, req.signing_digest());
  return req;
}

bool verify_request(const SignedRequest& request, const Hash32& key,
                    const SignatureScheme& scheme) {
  return scheme.verify(key, request.signing_digest(), request.signature);
}

namespace {
crypto::GcmNonce derive_nonce(const Hash32& key, uint64_t counter) {
  ByteWriter w;
  w.str("lognonce:").raw(key).u64(counter);
  Hash32 h = crypto::sha256(w.bytes());
  crypto::GcmNonce nonce{};
  std::memcpy(nonce.data(), h.data(), nonce.size());
  return nonce;
}
}  // namespace

const LogEntry& LogStore::append(std::span<const uint8_t> plaintext,
                                 uint64_t tick) {
  LogEntry entry;
  entry.ciphertext = crypto::aead_seal(key_, derive_nonce(key_, counter_),
                                       plaintext);
  entry.content_id = crypto::sha256(entry.ciphertext);
  entry.created_at = tick;
  ++counter_;
  auto [it, inserted] = entries_.emplace(entry.content_id, std::move(entry));
  if (inserted) {
    order_.push_back(it->first);
  }
  return it->second;
}

const LogEntry& LogStore::append(const std::string& plaintext, uint64_t tick) {
  return append(as_bytes(plaintext), tick);
}

const LogEntry& LogStore::get(const Hash32& content_id) const {
  auto it = entries_.find(content_id);
  if (it == entries_.end()) {
    throw std::out_of_range("unknown content id: " + to_hex(content_id));
  }
  return it->second;
}

bool LogStore::contains(const Hash32& content_id) const {
  return entries_.count(content_id) != 0;
}

std::optional<Bytes> LogStore::decrypt(const LogEntry& entry) const {
  return crypto::aead_open(
      key_, std::span<const uint8_t>(entry.ciphertext.data(),
                                     entry.ciphertext.size()));
}

void LogStore::export_dir(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& id : order_) {
    const LogEntry& entry = entries_.at(id);
    std::ofstream f(dir / (to_hex(id) + ".bin"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(entry.ciphertext.data()),
            static_cast<std::streamsize>(entry.ciphertext.size()));
  }
  json manifest;
  manifest["counter"] = std::to_string(counter_);
  ByteWriter w;
  w.str("keyid:").raw(key_);
  manifest["key_id"] = to_hex(crypto::sha256(w.bytes()));
  json ids = json::array();
  for (const auto& id : order_) {
    ids.push_back(to_hex(id));
  }
  manifest["entries"] = ids;
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

std::string request_record_to_json(const ProcessedRequest& processed) {
  const SignedRequest& r = processed.request;
  json j;
  j["call_id"] = std::to_string(r.call_id);
  j["caller"] = to_hex(r.caller);
  j["endpoint_digest"] = to_hex(r.endpoint_digest);
  j["nonce"] = std::to_string(r.nonce);
  j["fee"] = std::to_string(r.fee);
  j["signature"] = to_hex(r.signature);
  j["tick"] = std::to_string(processed.tick);
  return j.dump();
}

std::optional<ProcessedRequest> request_record_from_json(
    const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return std::nullopt;
  }
  try {
    ProcessedRequest p;
    p.request.call_id = std::stoull(j.at("call_id").get<std::string>());
    p.request.caller = hash32_from_hex(j.at("caller").get<std::string>());
    p.request.endpoint_digest =
        hash32_from_hex(j.at("endpoint_digest").get<std::string>());
    p.request.nonce = std::stoull(j.at("nonce").get<std::string>());
    p.request.fee = std::stoll(j.at("fee").get<std::string>());
    p.request.signature = hash32_from_hex(j.at("signature").get<std::string>());
    p.tick = std::stoull(j.at("tick").get<std::string>());
    return p;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

Receipt build_receipt(const Address& gateway, const Address& user,
                      uint64_t window_start, uint64_t window_end,
                      const std::vector<ProcessedRequest>& processed,
                      LogStore& store, const KeyRegistry& keys,
                      const SignatureScheme& scheme) {
  Receipt receipt;
  receipt.gateway = gateway;
  receipt.user = user;
  receipt.window_start = window_start;
  receipt.window_end = window_end;

  auto key_it = keys.find(user);
  if (key_it == keys.end()) {
    throw std::invalid_argument("no key registered for receipt user");
  }
  std::set<uint64_t> seen_nonces;
  for (const ProcessedRequest& p : processed) {
    if (p.request.caller != user) {
      throw std::invalid_argument("request from a different user in receipt");
    }
    if (p.tick < window_start || p.tick > window_end) {
      throw std::invalid_argument("request outside the receipt window");
    }
    if (!verify_request(p.request, key_it->second, scheme)) {
      throw std::invalid_argument("request signature does not verify");
    }
    if (!seen_nonces.insert(p.request.nonce).second) {
      throw std::invalid_argument("duplicate nonce in receipt");
    }
    const LogEntry& entry = store.append(request_record_to_json(p), p.tick);
    receipt.call_ids.push_back(p.request.call_id);
    receipt.log_content_ids.push_back(entry.content_id);
    receipt.total_fee += p.request.fee;
  }
  return receipt;
}

ReceiptCheck verify_receipt(const Receipt& receipt, const LogStore& store,
                            const KeyRegistry& keys,
                            const SignatureScheme& scheme) {
  auto key_it = keys.find(receipt.user);
  if (key_it == keys.end()) {
    return {false, "no key registered for receipt user"};
  }
  if (receipt.log_content_ids.size() != receipt.call_ids.size()) {
    return {false, "call id and log entry counts differ"};
  }
  int64_t fee_sum = 0;
  std::set<uint64_t> seen_nonces;
  for (size_t i = 0; i < receipt.log_content_ids.size(); ++i) {
    const Hash32& id = receipt.log_content_ids[i];
    if (!store.contains(id)) {
      return {false, "missing log entry " + to_hex(id)};
    }
    const LogEntry& entry = store.get(id);
    if (crypto::sha256(entry.ciphertext) != id) {
      return {false, "content id does not match ciphertext"};
    }
    auto plain = store.decrypt(entry);
    if (!plain) {
      return {false, "log entry fails authenticated decryption"};
    }
    auto record = request_record_from_json(
        std::string(plain->begin(), plain->end()));
    if (!record) {
      return {false, "log entry is not a request record"};
    }
    const SignedRequest& req = record->request;
    if (req.caller != receipt.user) {
      return {false, "logged request belongs to a different user"};
    }
    if (record->tick < receipt.window_start ||
        record->tick > receipt.window_end) {
      return {false, "logged request outside the receipt window"};
    }
    if (req.call_id != receipt.call_ids[i]) {
      return {false, "call id mismatch at position " + std::to_string(i)};
    }
    if (!verify_request(req, key_it->second, scheme)) {
      return {false, "request signature does not verify"};
    }
    if (!seen_nonces.insert(req.nonce).second) {
      return {false, "duplicate nonce across receipt entries"};
    }
    fee_sum += req.fee;
  }
  if (fee_sum != receipt.total_fee) {
    return {false, "total fee does not match the sum of request fees"};
  }
  return {true, ""};
}

std::string Receipt::to_json() const {
  json j;
  j["gateway"] = to_hex(gateway);
  j["user"] = to_hex(user);
  j["window_start"] = std::to_string(window_start);
  j["window_end"] = std::to_string(window_end);
  j["total_fee"] = std::to_string(total_fee);
  json calls = json::array();
  for (uint64_t id : call_ids) {
    calls.push_back(std::to_string(id));
  }
  j["call_ids"] = calls;
  json logs = json::array();
  for (const Hash32& id : log_content_ids) {
    logs.push_back(to_hex(id));
  }
  j["log_content_ids"] = logs;
  return j.dump(2);
}

Receipt Receipt::from_json(const std::string& text) {
  json j = json::parse(text);
  Receipt r;
  r.gateway = hash32_from_hex(j.at("gateway").get<std::string>());
  r.user = hash32_from_hex(j.at("user").get<std::string>());
  r.window_start = std::stoull(j.at("window_start").get<std::string>());
  r.window_end = std::stoull(j.at("window_end").get<std::string>());
  r.total_fee = std::stoll(j.at("total_fee").get<std::string>());
  for (const auto& c : j.at("call_ids")) {
    r.call_ids.push_back(std::stoull(c.get<std::string>()));
  }
  for (const auto& c : j.at("log_content_ids")) {
    r.log_content_ids.push_back(hash32_from_hex(c.get<std::string>()));
  }
  return r;
}

}  // namespace faasim::logstore
