#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "faasim/common/bytes.hpp"
#include "faasim/common/crypto.hpp"

namespace faasim::logstore {

// One API call request as signed by the caller. The signature covers
// sha256(caller || endpoint_digest || nonce || fee); call_id is transport
// metadata and not part of the signed payload.
struct SignedRequest {
  uint64_t call_id = 0;
  Address caller{};
  Hash32 endpoint_digest{};
  uint64_t nonce = 0;
  int64_t fee = 0;
  Hash32 signature{};

  Hash32 signing_digest() const;
};

// A request together with the tick at which the gateway processed it.
struct ProcessedRequest {
  SignedRequest request;
  uint64_t tick = 0;
};

struct LogEntry {
  Hash32 content_id{};  // sha256 of the stored ciphertext
  Bytes ciphertext;
  uint64_t created_at = 0;
};

struct Receipt {
  Address gateway{};
  Address user{};
  uint64_t window_start = 0;
  uint64_t window_end = 0;  // inclusive
  std::vector<uint64_t> call_ids;
  int64_t total_fee = 0;
  std::vector<Hash32> log_content_ids;

  std::string to_json() const;
  static Receipt from_json(const std::string& text);
};

// Pluggable signature scheme. The default is a deterministic keyed digest
// so traces are byte-reproducible; an asymmetric scheme can be slotted in
// behind the same interface.
class SignatureScheme {
 public:
  virtual ~SignatureScheme() = default;
  virtual Hash32 sign(const Hash32& key, const Hash32& digest) const = 0;
  virtual bool verify(const Hash32& key, const Hash32& digest,
                      const Hash32& signature) const = 0;
};

class KeyedDigestScheme final : public SignatureScheme {
 public:
  Hash32 sign(const Hash32& key, const Hash32& digest) const override;
  bool verify(const Hash32& key, const Hash32& digest,
              const Hash32& signature) const override;
};

const SignatureScheme& default_scheme();

// Shared-secret registry standing in for on-ledger key material. With the
// keyed-digest scheme the verification key equals the signing key.
using KeyRegistry = std::map<Address, Hash32>;

// Caller-side signing context. Tracks used nonces so a nonce can never be
// reused by the same caller.
class RequestSigner {
 public:
  RequestSigner(Address caller, Hash32 key,
                const SignatureScheme& scheme = default_scheme())
      : caller_(caller), key_(key), scheme_(&scheme) {}

  SignedRequest sign(uint64_t call_id, const Hash32& endpoint_digest,
                     uint64_t nonce, int64_t fee);

  const Address& caller() const { return caller_; }
  const std::set<uint64_t>& used_nonces() const { return used_nonces_; }

 private:
  Address caller_;
  Hash32 key_;
  const SignatureScheme* scheme_;
  std::set<uint64_t> used_nonces_;
};

bool verify_request(const SignedRequest& request, const Hash32& key,
                    const SignatureScheme& scheme = default_scheme());

// Content-addressed, append-only store of encrypted records. Entries are
// sealed with AES-256-GCM under the store key; the per-entry nonce is
// derived from (key, entry counter) so identical plaintexts never share a
// nonce and the whole store is reproducible.
class LogStore {
 public:
  explicit LogStore(Hash32 key) : key_(key) {}

  const LogEntry& append(std::span<const uint8_t> plaintext, uint64_t tick);
  const LogEntry& append(const std::string& plaintext, uint64_t tick);
  const LogEntry& get(const Hash32& content_id) const;
  bool contains(const Hash32& content_id) const;
  std::optional<Bytes> decrypt(const LogEntry& entry) const;

  uint64_t counter() const { return counter_; }
  size_t size() const { return entries_.size(); }
  const Hash32& key() const { return key_; }

  // Writes one file per entry named by hex content_id plus manifest.json.
  void export_dir(const std::filesystem::path& dir) const;

 private:
  Hash32 key_;
  uint64_t counter_ = 0;
  std::map<Hash32, LogEntry> entries_;
  std::vector<Hash32> order_;
};

// Gateway-side receipt construction. Every processed request is verified,
// checked against (user, window), and an encrypted copy is appended to the
// store; the receipt references those copies by content id.
Receipt build_receipt(const Address& gateway, const Address& user,
                      uint64_t window_start, uint64_t window_end,
                      const std::vector<ProcessedRequest>& processed,
                      LogStore& store, const KeyRegistry& keys,
                      const SignatureScheme& scheme = default_scheme());

struct ReceiptCheck {
  bool valid = false;
  std::string reason;
};

ReceiptCheck verify_receipt(const Receipt& receipt, const LogStore& store,
                            const KeyRegistry& keys,
                            const SignatureScheme& scheme = default_scheme());

// Serialization of the logged record (request + processing tick).
std::string request_record_to_json(const ProcessedRequest& processed);
std::optional<ProcessedRequest> request_record_from_json(
    const std::string& text);

}  // namespace faasim::logstore
