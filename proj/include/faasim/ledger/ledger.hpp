#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "faasim/common/bytes.hpp"
#include "faasim/common/crypto.hpp"
#include "faasim/logstore/logstore.hpp"

namespace faasim::ledger {

enum class HttpMethod { Get, Put, Post, Delete };

constexpr std::array<HttpMethod, 4> kAllMethods{
    HttpMethod::Get, HttpMethod::Put, HttpMethod::Post, HttpMethod::Delete};

const char* method_name(HttpMethod m);

struct Permission {
  bool get = false;
  bool put = false;
  bool post = false;
  bool del = false;

  bool allows(HttpMethod m) const;
  bool any() const { return get || put || post || del; }
  bool operator==(const Permission&) const = default;
};

struct Account {
  Address address{};
  int64_t balance = 0;
  uint64_t nonce = 0;
};

struct Block {
  uint64_t height = 0;
  Hash32 parent_hash{};
  Hash32 state_digest{};
  Hash32 hash{};
};

// hash = sha256(height_be64 || parent_hash || state_digest)
Hash32 block_hash(uint64_t height, const Hash32& parent_hash,
                  const Hash32& state_digest);

struct EndpointRecord {
  std::string path;
  Address provider{};
  bool is_public = false;
};

struct AccessGrant {
  uint64_t token_id = 0;
  Address subject{};
  Hash32 endpoint_digest{};
  Permission method_mask;
  uint64_t issued_at = 0;
  uint64_t expires_at = 0;
};

struct StakeRecord {
  Address entity{};
  int64_t staked = 0;
  int64_t slashed_total = 0;
};

struct BillingAccount {
  Address user{};
  int64_t deposit = 0;
  int64_t accrued = 0;
  int64_t watermark = 0;
  uint64_t cycle_length = 0;
};

enum class DisputeOutcome { Open, Upheld, Rejected };

struct DisputeRecord {
  uint64_t id = 0;
  Address claimant{};
  Address respondent{};
  uint64_t call_id = 0;
  DisputeOutcome outcome = DisputeOutcome::Open;
  int64_t slash_amount = 0;
  bool settled = false;
};

struct GatewayRecord {
  uint64_t id = 0;
  Address provider{};
  std::string data_center;
};

// Latest oracle-published load snapshot, overwritten on each publication.
struct LoadFeed {
  std::map<std::string, uint64_t> queue_by_dc;
  uint64_t height = 0;
};

struct LedgerConfig {
  int64_t min_stake = 10;
  uint32_t gateway_quota_per_dc = 4;
  double watermark_fraction = 0.8;
  uint64_t cycle_length = 1000;
};

// Deterministic single-writer state machine standing in for the management
// blockchain. All mutating calls go through one serialized stream per
// instance; reads never mutate.
class Ledger {
 public:
  explicit Ledger(LedgerConfig config = {});

  // --- time (integer ticks driven by the caller) ---
  uint64_t now() const { return now_; }
  void advance_time(uint64_t now);

  // --- accounts ---
  const Account& create_account(const Address& address,
                                int64_t initial_balance = 0);
  const Account* find_account(const Address& address) const;
  int64_t balance(const Address& address) const;
  // Sum of balances + billing deposits + stakes. Changes only through
  // deposit, settlement and slashing.
  int64_t total_tokens() const;

  // --- beacon chain ---
  const Block& append_block(const Hash32& state_digest);
  Hash32 beacon(uint64_t height) const;
  const Block& block_at(uint64_t height) const;
  uint64_t chain_height() const { return blocks_.size(); }
  const std::vector<Block>& blocks() const { return blocks_; }

  // --- data centers and gateways ---
  void register_data_center(const std::string& dc_id);
  uint64_t register_gateway(const Address& provider, const std::string& dc_id,
                            int64_t stake);
  const std::map<uint64_t, GatewayRecord>& gateways() const {
    return gateways_;
  }
  const StakeRecord* find_stake(const Address& entity) const;

  // --- endpoint registry and access control ---
  void register_endpoint(const Address& provider, const std::string& path,
                         bool is_public);
  void set_permission(const Address& provider, const Address& subject,
                      const std::string& path, Permission perm);
  bool check_access(const Address& subject, const std::string& path,
                    HttpMethod method) const;
  struct Resolution {
    std::optional<Address> provider;
    std::vector<std::string> data_centers;
  };
  Resolution resolve_endpoint(const std::string& path) const;
  const EndpointRecord* find_endpoint(const std::string& path) const;

  // --- access tokens ---
  AccessGrant issue_access_token(const Address& subject,
                                 const std::string& path, Permission methods,
                                 uint64_t ttl);
  void transfer_access_token(uint64_t token_id, const Address& new_owner);
  bool verify_access_token(const AccessGrant& grant, uint64_t now,
                           HttpMethod method) const;
  std::optional<Address> token_owner(uint64_t token_id) const;

  // --- billing ---
  BillingAccount& deposit_billing(const Address& user, int64_t amount);
  const BillingAccount* find_billing(const Address& user) const;
  // Gateway-reported usage; returns the new accrued total.
  int64_t accrue_usage(const Address& user, int64_t fee);
  using ReceiptVerifier =
      std::function<logstore::ReceiptCheck(const logstore::Receipt&)>;
  void settle_receipt(const logstore::Receipt& receipt,
                      int64_t weighted_amount, const ReceiptVerifier& verify);

  // --- disputes and slashing ---
  uint64_t open_dispute(const Address& claimant, const Address& respondent,
                        uint64_t call_id);
  void resolve_dispute(uint64_t dispute_id, DisputeOutcome outcome,
                       int64_t slash_amount);
  void apply_slash(const Address& entity, int64_t amount, uint64_t dispute_id);
  const DisputeRecord* find_dispute(uint64_t dispute_id) const;

  // --- oracle load feed ---
  void publish_load_feed(const std::map<std::string, uint64_t>& queue_by_dc,
                         uint64_t height);
  const LoadFeed& load_feed() const { return feed_; }

  // --- canonical state export ---
  // Sorted keys, every integer rendered as a decimal string, so the digest
  // is reproducible across implementations.
  std::string to_json_string() const;
  static Ledger from_json_string(const std::string& text);
  Hash32 state_digest() const;

  const LedgerConfig& config() const { return config_; }

 private:
  Account& require_account(const Address& address);
  Account& account_or_create(const Address& address);
  const EndpointRecord& require_endpoint(const std::string& path) const;

  LedgerConfig config_;
  uint64_t now_ = 0;
  std::map<Address, Account> accounts_;
  std::vector<Block> blocks_;
  std::set<std::string> data_centers_;
  std::map<uint64_t, GatewayRecord> gateways_;
  uint64_t next_gateway_id_ = 1;
  std::map<Address, StakeRecord> stakes_;
  std::map<std::string, EndpointRecord> endpoints_;
  std::map<std::pair<Address, Hash32>, Permission> permissions_;
  struct TokenRecord {
    AccessGrant grant;
    Address owner{};
  };
  std::map<uint64_t, TokenRecord> tokens_;
  uint64_t next_token_id_ = 1;
  std::map<Address, BillingAccount> billing_;
  std::map<uint64_t, DisputeRecord> disputes_;
  uint64_t next_dispute_id_ = 1;
  // Settled windows per (gateway, user); overlapping re-settlement is
  // rejected.
  std::map<std::pair<Address, Address>, std::vector<std::pair<uint64_t, uint64_t>>>
      settled_windows_;
  LoadFeed feed_;
};

}  // namespace faasim::ledger
