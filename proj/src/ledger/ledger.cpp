#include "faasim/ledger/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace faasim::ledger {

using nlohmann::json;

const char* method_name(HttpMethod m) {
  switch (m) {
    case HttpMethod::Get:
      return "GET";
    case HttpMethod::Put:
      return "PUT";
    case HttpMethod::Post:
      return "POST";
    case HttpMethod::Delete:
      return "DELETE";
  }
  return "?";
}

bool Permission::allows(HttpMethod m) const {
  switch (m) {
    case HttpMethod::Get:
      return get;
    case HttpMethod::Put:
      return put;
    case HttpMethod::Post:
      return post;
    case HttpMethod::Delete:
      return del;
  }
  return false;
}

Hash32 block_hash(uint64_t height, const Hash32& parent_hash,
                  const Hash32& state_digest) {
  ByteWriter w;
  w.u64(height).raw(parent_hash).raw(state_digest);
  return crypto::sha256(w.bytes());
}

Ledger::Ledger(LedgerConfig config) : config_(config) {}

void Ledger::advance_time(uint64_t now) {
  if (now < now_) {
    throw std::invalid_argument("ledger time may not move backwards");
  }
  now_ = now;
}

const Account& Ledger::create_account(const Address& address,
                                      int64_t initial_balance) {
  auto [it, inserted] =
      accounts_.emplace(address, Account{address, initial_balance, 0});
  if (!inserted) {
    throw std::invalid_argument("account already exists");
  }
  return it->second;
}

const Account* Ledger::find_account(const Address& address) const {
  auto it = accounts_.find(address);
  return it == accounts_.end() ? nullptr : &it->second;
}

int64_t Ledger::balance(const Address& address) const {
  const Account* a = find_account(address);
  return a ? a->balance : 0;
}

int64_t Ledger::total_tokens() const {
  int64_t total = 0;
  for (const auto& [_, a] : accounts_) total += a.balance;
  for (const auto& [_, b] : billing_) total += b.deposit;
  for (const auto& [_, s] : stakes_) total += s.staked;
  return total;
}

Account& Ledger::require_account(const Address& address) {
  auto it = accounts_.find(address);
  if (it == accounts_.end()) {
    throw std::out_of_range("unknown account " + to_hex(address));
  }
  return it->second;
}

Account& Ledger::account_or_create(const Address& address) {
  auto it = accounts_.find(address);
  if (it == accounts_.end()) {
    it = accounts_.emplace(address, Account{address, 0, 0}).first;
  }
  return it->second;
}

const Block& Ledger::append_block(const Hash32& state_digest) {
  Block b;
  b.height = blocks_.size();
  b.parent_hash = blocks_.empty() ? kZeroHash : blocks_.back().hash;
  b.state_digest = state_digest;
  b.hash = block_hash(b.height, b.parent_hash, b.state_digest);
  blocks_.push_back(b);
  return blocks_.back();
}

Hash32 Ledger::beacon(uint64_t height) const { return block_at(height).hash; }

const Block& Ledger::block_at(uint64_t height) const {
  if (height >= blocks_.size()) {
    throw std::out_of_range("no block at height " + std::to_string(height));
  }
  return blocks_[height];
}

void Ledger::register_data_center(const std::string& dc_id) {
  data_centers_.insert(dc_id);
}

uint64_t Ledger::register_gateway(const Address& provider,
                                  const std::string& dc_id, int64_t stake) {
  if (stake < config_.min_stake) {
    throw std::invalid_argument("stake below the configured minimum");
  }
  if (!data_centers_.count(dc_id)) {
    throw std::invalid_argument("unknown data center " + dc_id);
  }
  uint32_t in_dc = 0;
  for (const auto& [_, gw] : gateways_) {
    if (gw.data_center == dc_id) ++in_dc;
  }
  if (in_dc >= config_.gateway_quota_per_dc) {
    throw std::invalid_argument("gateway quota exceeded for " + dc_id);
  }
  Account& acct = require_account(provider);
  if (acct.balance < stake) {
    throw std::invalid_argument("insufficient balance to cover the stake");
  }
  acct.balance -= stake;
  acct.nonce++;
  auto [it, _] = stakes_.emplace(provider, StakeRecord{provider, 0, 0});
  it->second.staked += stake;

  uint64_t id = next_gateway_id_++;
  gateways_.emplace(id, GatewayRecord{id, provider, dc_id});
  return id;
}

const StakeRecord* Ledger::find_stake(const Address& entity) const {
  auto it = stakes_.find(entity);
  return it == stakes_.end() ? nullptr : &it->second;
}

void Ledger::register_endpoint(const Address& provider,
                               const std::string& path, bool is_public) {
  if (endpoints_.count(path)) {
    throw std::invalid_argument("endpoint already registered: " + path);
  }
  account_or_create(provider).nonce++;
  endpoints_.emplace(path, EndpointRecord{path, provider, is_public});
}

const EndpointRecord& Ledger::require_endpoint(const std::string& path) const {
  auto it = endpoints_.find(path);
  if (it == endpoints_.end()) {
    throw std::out_of_range("unknown endpoint " + path);
  }
  return it->second;
}

const EndpointRecord* Ledger::find_endpoint(const std::string& path) const {
  auto it = endpoints_.find(path);
  return it == endpoints_.end() ? nullptr : &it->second;
}

void Ledger::set_permission(const Address& provider, const Address& subject,
                            const std::string& path, Permission perm) {
  const EndpointRecord& ep = require_endpoint(path);
  if (ep.provider != provider) {
    throw std::invalid_argument("only the endpoint provider may set permissions");
  }
  account_or_create(provider).nonce++;
  permissions_[{subject, crypto::sha256(path)}] = perm;
}

bool Ledger::check_access(const Address& subject, const std::string& path,
                          HttpMethod method) const {
  const EndpointRecord& ep = require_endpoint(path);
  if (ep.is_public) {
    return true;
  }
  if (ep.provider == subject) {
    return true;
  }
  auto it = permissions_.find({subject, crypto::sha256(path)});
  if (it == permissions_.end()) {
    return false;
  }
  return it->second.allows(method);
}

Ledger::Resolution Ledger::resolve_endpoint(const std::string& path) const {
  Resolution res;
  auto it = endpoints_.find(path);
  if (it == endpoints_.end()) {
    return res;
  }
  res.provider = it->second.provider;
  std::set<std::string> dcs;
  for (const auto& [_, gw] : gateways_) {
    dcs.insert(gw.data_center);
  }
  res.data_centers.assign(dcs.begin(), dcs.end());
  return res;
}

AccessGrant Ledger::issue_access_token(const Address& subject,
                                       const std::string& path,
                                       Permission methods, uint64_t ttl) {
  if (ttl == 0) {
    throw std::invalid_argument("token ttl must be positive");
  }
  if (!methods.any()) {
    throw std::invalid_argument("token must request at least one method");
  }
  for (HttpMethod m : kAllMethods) {
    if (methods.allows(m) && !check_access(subject, path, m)) {
      throw std::invalid_argument(std::string("access denied for method ") +
                                  method_name(m));
    }
  }
  AccessGrant grant;
  grant.token_id = next_token_id_++;
  grant.subject = subject;
  grant.endpoint_digest = crypto::sha256(path);
  grant.method_mask = methods;
  grant.issued_at = now_;
  grant.expires_at = now_ + ttl;
  tokens_.emplace(grant.token_id, TokenRecord{grant, subject});
  return grant;
}

void Ledger::transfer_access_token(uint64_t token_id,
                                   const Address& new_owner) {
  auto it = tokens_.find(token_id);
  if (it == tokens_.end()) {
    throw std::out_of_range("unknown token id");
  }
  it->second.owner = new_owner;
}

bool Ledger::verify_access_token(const AccessGrant& grant, uint64_t now,
                                 HttpMethod method) const {
  auto it = tokens_.find(grant.token_id);
  if (it == tokens_.end()) {
    return false;
  }
  const TokenRecord& rec = it->second;
  if (rec.owner != grant.subject || rec.grant.subject != grant.subject) {
    return false;
  }
  if (rec.grant.endpoint_digest != grant.endpoint_digest) {
    return false;
  }
  if (now >= rec.grant.expires_at) {
    return false;  // the expiry instant itself is invalid
  }
  return rec.grant.method_mask.allows(method);
}

std::optional<Address> Ledger::token_owner(uint64_t token_id) const {
  auto it = tokens_.find(token_id);
  if (it == tokens_.end()) return std::nullopt;
  return it->second.owner;
}

BillingAccount& Ledger::deposit_billing(const Address& user, int64_t amount) {
  if (amount < 0) {
    throw std::invalid_argument("deposit must be non-negative");
  }
  account_or_create(user).nonce++;
  auto [it, inserted] = billing_.emplace(
      user, BillingAccount{user, 0, 0, 0, config_.cycle_length});
  it->second.deposit += amount;
  it->second.watermark = static_cast<int64_t>(
      std::floor(config_.watermark_fraction *
                 static_cast<double>(it->second.deposit)));
  return it->second;
}

const BillingAccount* Ledger::find_billing(const Address& user) const {
  auto it = billing_.find(user);
  return it == billing_.end() ? nullptr : &it->second;
}

int64_t Ledger::accrue_usage(const Address& user, int64_t fee) {
  auto it = billing_.find(user);
  if (it == billing_.end()) {
    throw std::out_of_range("no billing account for user");
  }
  it->second.accrued += fee;
  return it->second.accrued;
}

void Ledger::settle_receipt(const logstore::Receipt& receipt,
                            int64_t weighted_amount,
                            const ReceiptVerifier& verify) {
  auto check = verify(receipt);
  if (!check.valid) {
    throw std::invalid_argument("unverifiable receipt: " + check.reason);
  }
  auto bit = billing_.find(receipt.user);
  if (bit == billing_.end()) {
    throw std::out_of_range("no billing account for receipt user");
  }
  BillingAccount& acct = bit->second;
  if (acct.deposit < receipt.total_fee) {
    throw std::invalid_argument("insufficient deposit for receipt");
  }
  auto& windows = settled_windows_[{receipt.gateway, receipt.user}];
  for (const auto& [s, e] : windows) {
    if (receipt.window_start <= e && s <= receipt.window_end) {
      throw std::invalid_argument("receipt window overlaps a settled window");
    }
  }
  // User is debited the full pre-weighting amount; the gateway credit is
  // the policy-weighted amount and may be negative.
  acct.deposit -= receipt.total_fee;
  acct.accrued = std::max<int64_t>(0, acct.accrued - receipt.total_fee);
  acct.watermark = static_cast<int64_t>(std::floor(
      config_.watermark_fraction * static_cast<double>(acct.deposit)));
  account_or_create(receipt.gateway).balance += weighted_amount;
  windows.emplace_back(receipt.window_start, receipt.window_end);
}

uint64_t Ledger::open_dispute(const Address& claimant,
                              const Address& respondent, uint64_t call_id) {
  uint64_t id = next_dispute_id_++;
  disputes_.emplace(
      id, DisputeRecord{id, claimant, respondent, call_id,
                        DisputeOutcome::Open, 0, false});
  return id;
}

void Ledger::resolve_dispute(uint64_t dispute_id, DisputeOutcome outcome,
                             int64_t slash_amount) {
  auto it = disputes_.find(dispute_id);
  if (it == disputes_.end()) {
    throw std::out_of_range("unknown dispute");
  }
  if (slash_amount > 0 && outcome != DisputeOutcome::Upheld) {
    throw std::invalid_argument("slash amount on a non-upheld dispute");
  }
  it->second.outcome = outcome;
  it->second.slash_amount = slash_amount;
}

void Ledger::apply_slash(const Address& entity, int64_t amount,
                         uint64_t dispute_id) {
  auto dit = disputes_.find(dispute_id);
  if (dit == disputes_.end()) {
    throw std::out_of_range("unknown dispute");
  }
  if (dit->second.outcome != DisputeOutcome::Upheld) {
    throw std::invalid_argument("dispute was not upheld");
  }
  auto sit = stakes_.find(entity);
  if (sit == stakes_.end() || sit->second.staked < amount) {
    throw std::invalid_argument("slash amount exceeds stake");
  }
  sit->second.staked -= amount;
  sit->second.slashed_total += amount;
  dit->second.settled = true;
}

const DisputeRecord* Ledger::find_dispute(uint64_t dispute_id) const {
  auto it = disputes_.find(dispute_id);
  return it == disputes_.end() ? nullptr : &it->second;
}

void Ledger::publish_load_feed(
    const std::map<std::string, uint64_t>& queue_by_dc, uint64_t height) {
  feed_.queue_by_dc = queue_by_dc;
  feed_.height = height;
}

namespace {

json perm_to_json(const Permission& p) {
  json j;
  j["get"] = p.get;
  j["put"] = p.put;
  j["post"] = p.post;
  j["delete"] = p.del;
  return j;
}

Permission perm_from_json(const json& j) {
  Permission p;
  p.get = j.at("get").get<bool>();
  p.put = j.at("put").get<bool>();
  p.post = j.at("post").get<bool>();
  p.del = j.at("delete").get<bool>();
  return p;
}

const char* outcome_name(DisputeOutcome o) {
  switch (o) {
    case DisputeOutcome::Open:
      return "open";
    case DisputeOutcome::Upheld:
      return "upheld";
    case DisputeOutcome::Rejected:
      return "rejected";
  }
  return "?";
}

DisputeOutcome outcome_from_name(const std::string& s) {
  if (s == "open") return DisputeOutcome::Open;
  if (s == "upheld") return DisputeOutcome::Upheld;
  if (s == "rejected") return DisputeOutcome::Rejected;
  throw std::invalid_argument("unknown dispute outcome " + s);
}

}  // namespace

std::string Ledger::to_json_string() const {
  json j;
  j["config"]["min_stake"] = std::to_string(config_.min_stake);
  j["config"]["gateway_quota_per_dc"] =
      std::to_string(config_.gateway_quota_per_dc);
  j["config"]["watermark_fraction"] =
      std::to_string(config_.watermark_fraction);
  j["config"]["cycle_length"] = std::to_string(config_.cycle_length);
  j["now"] = std::to_string(now_);

  json accounts = json::object();
  for (const auto& [addr, a] : accounts_) {
    json e;
    e["balance"] = std::to_string(a.balance);
    e["nonce"] = std::to_string(a.nonce);
    accounts[to_hex(addr)] = e;
  }
  j["accounts"] = accounts;

  json blocks = json::array();
  for (const Block& b : blocks_) {
    json e;
    e["height"] = std::to_string(b.height);
    e["parent_hash"] = to_hex(b.parent_hash);
    e["state_digest"] = to_hex(b.state_digest);
    e["hash"] = to_hex(b.hash);
    blocks.push_back(e);
  }
  j["blocks"] = blocks;

  j["data_centers"] = json(std::vector<std::string>(data_centers_.begin(),
                                                    data_centers_.end()));

  json gateways = json::object();
  for (const auto& [id, gw] : gateways_) {
    json e;
    e["provider"] = to_hex(gw.provider);
    e["data_center"] = gw.data_center;
    gateways[std::to_string(id)] = e;
  }
  j["gateways"] = gateways;
  j["next_gateway_id"] = std::to_string(next_gateway_id_);

  json stakes = json::object();
  for (const auto& [addr, s] : stakes_) {
    json e;
    e["staked"] = std::to_string(s.staked);
    e["slashed_total"] = std::to_string(s.slashed_total);
    stakes[to_hex(addr)] = e;
  }
  j["stakes"] = stakes;

  json endpoints = json::object();
  for (const auto& [path, ep] : endpoints_) {
    json e;
    e["provider"] = to_hex(ep.provider);
    e["is_public"] = ep.is_public;
    endpoints[path] = e;
  }
  j["endpoints"] = endpoints;

  json permissions = json::object();
  for (const auto& [key, perm] : permissions_) {
    permissions[to_hex(key.first) + ":" + to_hex(key.second)] =
        perm_to_json(perm);
  }
  j["permissions"] = permissions;

  json tokens = json::object();
  for (const auto& [id, rec] : tokens_) {
    json e;
    e["subject"] = to_hex(rec.grant.subject);
    e["owner"] = to_hex(rec.owner);
    e["endpoint_digest"] = to_hex(rec.grant.endpoint_digest);
    e["methods"] = perm_to_json(rec.grant.method_mask);
    e["issued_at"] = std::to_string(rec.grant.issued_at);
    e["expires_at"] = std::to_string(rec.grant.expires_at);
    tokens[std::to_string(id)] = e;
  }
  j["tokens"] = tokens;
  j["next_token_id"] = std::to_string(next_token_id_);

  json billing = json::object();
  for (const auto& [addr, b] : billing_) {
    json e;
    e["deposit"] = std::to_string(b.deposit);
    e["accrued"] = std::to_string(b.accrued);
    e["watermark"] = std::to_string(b.watermark);
    e["cycle_length"] = std::to_string(b.cycle_length);
    billing[to_hex(addr)] = e;
  }
  j["billing"] = billing;

  json disputes = json::object();
  for (const auto& [id, d] : disputes_) {
    json e;
    e["claimant"] = to_hex(d.claimant);
    e["respondent"] = to_hex(d.respondent);
    e["call_id"] = std::to_string(d.call_id);
    e["outcome"] = outcome_name(d.outcome);
    e["slash_amount"] = std::to_string(d.slash_amount);
    e["settled"] = d.settled;
    disputes[std::to_string(id)] = e;
  }
  j["disputes"] = disputes;
  j["next_dispute_id"] = std::to_string(next_dispute_id_);

  json windows = json::object();
  for (const auto& [key, spans] : settled_windows_) {
    json arr = json::array();
    for (const auto& [s, e] : spans) {
      arr.push_back({std::to_string(s), std::to_string(e)});
    }
    windows[to_hex(key.first) + ":" + to_hex(key.second)] = arr;
  }
  j["settled_windows"] = windows;

  json feed = json::object();
  for (const auto& [dc, q] : feed_.queue_by_dc) {
    feed[dc] = std::to_string(q);
  }
  j["load_feed"]["queues"] = feed;
  j["load_feed"]["height"] = std::to_string(feed_.height);

  return j.dump();
}

Hash32 Ledger::state_digest() const { return crypto::sha256(to_json_string()); }

Ledger Ledger::from_json_string(const std::string& text) {
  json j = json::parse(text);
  LedgerConfig cfg;
  cfg.min_stake = std::stoll(j.at("config").at("min_stake").get<std::string>());
  cfg.gateway_quota_per_dc = static_cast<uint32_t>(
      std::stoul(j.at("config").at("gateway_quota_per_dc").get<std::string>()));
  cfg.watermark_fraction =
      std::stod(j.at("config").at("watermark_fraction").get<std::string>());
  cfg.cycle_length =
      std::stoull(j.at("config").at("cycle_length").get<std::string>());
  Ledger l(cfg);
  l.now_ = std::stoull(j.at("now").get<std::string>());

  for (const auto& [addr, e] : j.at("accounts").items()) {
    Account a;
    a.address = hash32_from_hex(addr);
    a.balance = std::stoll(e.at("balance").get<std::string>());
    a.nonce = std::stoull(e.at("nonce").get<std::string>());
    l.accounts_.emplace(a.address, a);
  }
  for (const auto& e : j.at("blocks")) {
    Block b;
    b.height = std::stoull(e.at("height").get<std::string>());
    b.parent_hash = hash32_from_hex(e.at("parent_hash").get<std::string>());
    b.state_digest = hash32_from_hex(e.at("state_digest").get<std::string>());
    b.hash = hash32_from_hex(e.at("hash").get<std::string>());
    l.blocks_.push_back(b);
  }
  for (const auto& dc : j.at("data_centers")) {
    l.data_centers_.insert(dc.get<std::string>());
  }
  for (const auto& [id, e] : j.at("gateways").items()) {
    GatewayRecord gw;
    gw.id = std::stoull(id);
    gw.provider = hash32_from_hex(e.at("provider").get<std::string>());
    gw.data_center = e.at("data_center").get<std::string>();
    l.gateways_.emplace(gw.id, gw);
  }
  l.next_gateway_id_ = std::stoull(j.at("next_gateway_id").get<std::string>());
  for (const auto& [addr, e] : j.at("stakes").items()) {
    StakeRecord s;
    s.entity = hash32_from_hex(addr);
    s.staked = std::stoll(e.at("staked").get<std::string>());
    s.slashed_total = std::stoll(e.at("slashed_total").get<std::string>());
    l.stakes_.emplace(s.entity, s);
  }
  for (const auto& [path, e] : j.at("endpoints").items()) {
    EndpointRecord ep;
    ep.path = path;
    ep.provider = hash32_from_hex(e.at("provider").get<std::string>());
    ep.is_public = e.at("is_public").get<bool>();
    l.endpoints_.emplace(path, ep);
  }
  for (const auto& [key, e] : j.at("permissions").items()) {
    auto sep = key.find(':');
    Address subject = hash32_from_hex(key.substr(0, sep));
    Hash32 digest = hash32_from_hex(key.substr(sep + 1));
    l.permissions_[{subject, digest}] = perm_from_json(e);
  }
  for (const auto& [id, e] : j.at("tokens").items()) {
    TokenRecord rec;
    rec.grant.token_id = std::stoull(id);
    rec.grant.subject = hash32_from_hex(e.at("subject").get<std::string>());
    rec.owner = hash32_from_hex(e.at("owner").get<std::string>());
    rec.grant.endpoint_digest =
        hash32_from_hex(e.at("endpoint_digest").get<std::string>());
    rec.grant.method_mask = perm_from_json(e.at("methods"));
    rec.grant.issued_at = std::stoull(e.at("issued_at").get<std::string>());
    rec.grant.expires_at = std::stoull(e.at("expires_at").get<std::string>());
    l.tokens_.emplace(rec.grant.token_id, rec);
  }
  l.next_token_id_ = std::stoull(j.at("next_token_id").get<std::string>());
  for (const auto& [addr, e] : j.at("billing").items()) {
    BillingAccount b;
    b.user = hash32_from_hex(addr);
    b.deposit = std::stoll(e.at("deposit").get<std::string>());
    b.accrued = std::stoll(e.at("accrued").get<std::string>());
    b.watermark = std::stoll(e.at("watermark").get<std::string>());
    b.cycle_length = std::stoull(e.at("cycle_length").get<std::string>());
    l.billing_.emplace(b.user, b);
  }
  for (const auto& [id, e] : j.at("disputes").items()) {
    DisputeRecord d;
    d.id = std::stoull(id);
    d.claimant = hash32_from_hex(e.at("claimant").get<std::string>());
    d.respondent = hash32_from_hex(e.at("respondent").get<std::string>());
    d.call_id = std::stoull(e.at("call_id").get<std::string>());
    d.outcome = outcome_from_name(e.at("outcome").get<std::string>());
    d.slash_amount = std::stoll(e.at("slash_amount").get<std::string>());
    d.settled = e.at("settled").get<bool>();
    l.disputes_.emplace(d.id, d);
  }
  l.next_dispute_id_ = std::stoull(j.at("next_dispute_id").get<std::string>());
  for (const auto& [key, arr] : j.at("settled_windows").items()) {
    auto sep = key.find(':');
    Address gw = hash32_from_hex(key.substr(0, sep));
    Address user = hash32_from_hex(key.substr(sep + 1));
    auto& spans = l.settled_windows_[{gw, user}];
    for (const auto& e : arr) {
      spans.emplace_back(std::stoull(e.at(0).get<std::string>()),
                         std::stoull(e.at(1).get<std::string>()));
    }
  }
  for (const auto& [dc, q] : j.at("load_feed").at("queues").items()) {
    l.feed_.queue_by_dc[dc] = std::stoull(q.get<std::string>());
  }
  l.feed_.height = std::stoull(j.at("load_feed").at("height").get<std::string>());
  return l;
}

}  // namespace faasim::ledger
