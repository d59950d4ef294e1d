#include "faasim/sim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace faasim::sim {

using nlohmann::json;

std::string ScenarioConfig::dc_id(uint32_t index) const {
  return "dc" + std::to_string(index);
}

uint64_t ScenarioConfig::capacity_of(uint32_t index) const {
  if (!capacities.empty()) {
    return capacities.at(index);
  }
  return capacity_per_dc;
}

uint64_t ScenarioConfig::aggregate_capacity() const {
  uint64_t total = 0;
  for (uint32_t i = 0; i < num_data_centers; ++i) {
    total += capacity_of(i);
  }
  return total;
}

double ScenarioConfig::effective_arrival_rate() const {
  if (arrival_rate > 0.0) {
    return arrival_rate;
  }
  return arrival_rate_multiplier * static_cast<double>(aggregate_capacity());
}

sched::PaymentPolicy ScenarioConfig::payment_policy() const {
  sched::PaymentPolicy policy;
  policy.tolerance = payment_tolerance;
  policy.overage_penalty = overage_penalty;
  if (!target_distribution.empty()) {
    policy.target_distribution = target_distribution;
  } else {
    for (uint32_t i = 0; i < num_data_centers; ++i) {
      policy.target_distribution[dc_id(i)] =
          1.0 / static_cast<double>(num_data_centers);
    }
  }
  return policy;
}

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw std::invalid_argument("invalid config: " + key + " " + why);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_key(key, "has the wrong type");
  }
}

void validate(const ScenarioConfig& c) {
  if (c.num_data_centers < 2) bad_key("num_data_centers", "must be at least 2");
  if (c.gateways_per_dc < 1) bad_key("gateways_per_dc", "must be at least 1");
  if (c.total_calls < 1) bad_key("total_calls", "must be at least 1");
  if (c.runs < 1) bad_key("runs", "must be at least 1");
  if (!c.capacities.empty() &&
      c.capacities.size() != c.num_data_centers) {
    bad_key("capacities", "must list one capacity per data center");
  }
  for (uint32_t i = 0; i < c.num_data_centers; ++i) {
    if (c.capacity_of(i) < 1) bad_key("capacities", "must all be at least 1");
  }
  if (c.arrival_mode != "random" && c.arrival_mode != "single_dc") {
    bad_key("arrival_mode", "must be random or single_dc");
  }
  if (c.effective_arrival_rate() <= 0.0) {
    bad_key("arrival_rate", "must resolve to a positive rate");
  }
  if (c.refresh_period < 1) bad_key("refresh_period", "must be at least 1");
  if (c.blocks_interval < 1) bad_key("blocks_interval", "must be at least 1");
  if (c.overload_multiplier < 1) {
    bad_key("overload_multiplier", "must be at least 1");
  }
  if (c.fee_per_call < 0) bad_key("fee_per_call", "must be non-negative");
  if (c.billing.user_deposit < 0) {
    bad_key("billing.user_deposit", "must be non-negative");
  }
  if (c.billing.cycle_length < 1) {
    bad_key("billing.cycle_length", "must be at least 1");
  }
}

}  // namespace

ScenarioConfig scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario is not valid JSON: ") +
                                e.what());
  }
  ScenarioConfig c;
  c.seed = get_or<uint64_t>(j, "seed", c.seed);
  c.num_data_centers = get_or<uint32_t>(j, "num_data_centers", c.num_data_centers);
  c.gateways_per_dc = get_or<uint32_t>(j, "gateways_per_dc", c.gateways_per_dc);
  c.capacity_per_dc = get_or<uint64_t>(j, "capacity_per_dc", c.capacity_per_dc);
  c.capacities = get_or<std::vector<uint64_t>>(j, "capacities", {});
  try {
    c.policy = sched::policy_from_name(
        get_or<std::string>(j, "policy", "default"));
  } catch (const std::invalid_argument&) {
    bad_key("policy", "must be default, choice2 or none");
  }
  c.arrival_mode = get_or<std::string>(j, "arrival_mode", c.arrival_mode);
  c.total_calls = get_or<uint64_t>(j, "total_calls", c.total_calls);
  c.runs = get_or<uint32_t>(j, "runs", c.runs);
  c.arrival_rate = get_or<double>(j, "arrival_rate", c.arrival_rate);
  c.arrival_rate_multiplier =
      get_or<double>(j, "arrival_rate_multiplier", c.arrival_rate_multiplier);
  c.refresh_period = get_or<uint64_t>(j, "refresh_period", c.refresh_period);
  c.blocks_interval = get_or<uint64_t>(j, "blocks_interval", c.blocks_interval);
  c.forward_delay = get_or<uint64_t>(j, "forward_delay", c.forward_delay);
  c.overload_multiplier =
      get_or<uint64_t>(j, "overload_multiplier", c.overload_multiplier);
  c.multi_hop = get_or<bool>(j, "multi_hop", c.multi_hop);
  c.fee_per_call = get_or<int64_t>(j, "fee_per_call", c.fee_per_call);

  if (j.contains("payment")) {
    const json& p = j.at("payment");
    c.payment_tolerance = get_or<double>(p, "tolerance", c.payment_tolerance);
    c.overage_penalty = get_or<double>(p, "overage_penalty", c.overage_penalty);
    if (p.contains("target_distribution")) {
      try {
        c.target_distribution =
            p.at("target_distribution").get<std::map<std::string, double>>();
      } catch (const json::exception&) {
        bad_key("payment.target_distribution", "has the wrong type");
      }
    }
  }
  if (j.contains("billing")) {
    const json& b = j.at("billing");
    c.billing.enabled = get_or<bool>(b, "enabled", c.billing.enabled);
    c.billing.user_deposit =
        get_or<int64_t>(b, "user_deposit", c.billing.user_deposit);
    c.billing.watermark_fraction =
        get_or<double>(b, "watermark_fraction", c.billing.watermark_fraction);
    c.billing.cycle_length =
        get_or<uint64_t>(b, "cycle_length", c.billing.cycle_length);
    c.billing.gateway_stake =
        get_or<int64_t>(b, "gateway_stake", c.billing.gateway_stake);
    c.billing.min_stake = get_or<int64_t>(b, "min_stake", c.billing.min_stake);
  }
  if (j.contains("mesh")) {
    const json& m = j.at("mesh");
    c.mesh.d = get_or<uint32_t>(m, "d", c.mesh.d);
    c.mesh.d_lo = get_or<uint32_t>(m, "d_lo", c.mesh.d_lo);
    c.mesh.d_hi = get_or<uint32_t>(m, "d_hi", c.mesh.d_hi);
    c.mesh.fanout_size = get_or<uint32_t>(m, "fanout_size", c.mesh.fanout_size);
    c.mesh.score_threshold =
        get_or<double>(m, "score_threshold", c.mesh.score_threshold);
    c.mesh.heartbeat_period =
        get_or<uint64_t>(m, "heartbeat_period", c.mesh.heartbeat_period);
    c.mesh.fanout_ttl = get_or<uint64_t>(m, "fanout_ttl", c.mesh.fanout_ttl);
  }
  if (j.contains("topology")) {
    c.topology_json = j.at("topology").dump();
  }
  validate(c);
  return c;
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open scenario file " + path);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(buf.str());
}

namespace {

const std::set<std::string>& known_override_keys() {
  static const std::set<std::string> keys = {
      "seed", "num_data_centers", "gateways_per_dc", "capacity_per_dc",
      "capacities", "policy", "arrival_mode", "total_calls", "runs",
      "arrival_rate", "arrival_rate_multiplier", "refresh_period",
      "blocks_interval", "forward_delay", "overload_multiplier", "multi_hop",
      "fee_per_call", "payment.tolerance", "payment.overage_penalty",
      "payment.target_distribution", "billing.enabled", "billing.user_deposit",
      "billing.watermark_fraction", "billing.cycle_length",
      "billing.gateway_stake", "billing.min_stake", "mesh.d", "mesh.d_lo",
      "mesh.d_hi", "mesh.fanout_size", "mesh.score_threshold",
      "mesh.heartbeat_period", "mesh.fanout_ttl"};
  return keys;
}

}  // namespace

void apply_override(std::string& json_text, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key=value: " +
                                assignment);
  }
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  if (!known_override_keys().count(key)) {
    throw std::invalid_argument("unknown config key: " + key);
  }
  json j = json::parse(json_text);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }
  json* node = &j;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) {
    parts.push_back(part);
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = parsed;
  json_text = j.dump(2);
}

Hash32 run_seed_hash(uint64_t seed, uint32_t run_index) {
  ByteWriter w;
  w.str("run").u64(seed).u64(run_index);
  return crypto::sha256(w.bytes());
}

bool EventQueue::Later::operator()(const Event& a, const Event& b) const {
  return std::tie(a.tick, a.kind, a.seq) > std::tie(b.tick, b.kind, b.seq);
}

void EventQueue::push(uint64_t tick, EventKind kind, uint64_t payload) {
  heap_.push(Event{tick, kind, next_seq_++, payload});
}

Event EventQueue::pop() {
  if (heap_.empty()) {
    throw std::logic_error("pop on an empty event queue");
  }
  Event e = heap_.top();
  heap_.pop();
  return e;
}

namespace {

struct QueuedCall {
  uint64_t call_id = 0;
  uint64_t arrival = 0;
  uint64_t gateway = 0;
};

struct GatewayBilling {
  Address address{};
  std::vector<logstore::ProcessedRequest> pending;
  uint64_t window_start = 0;
};

// Mutable world for one run, wired together once and driven by the event
// queue.
struct RunState {
  const ScenarioConfig& config;
  ledger::Ledger led;
  std::vector<sched::DataCenterState> dcs;
  std::vector<std::deque<QueuedCall>> queues;
  std::map<uint64_t, std::string> dc_of_gateway;
  std::map<uint64_t, Address> gateway_address;
  sched::LoadCache cache;
  std::map<uint64_t, std::vector<std::pair<size_t, QueuedCall>>> delayed;

  Hash32 run_seed{};
  uint64_t served = 0;
  uint64_t queue_time_sum = 0;
  uint64_t forwarded = 0;
  uint64_t last_tick = 0;
  std::vector<sched::RoutingDecision> decisions;
  std::map<std::string, uint64_t> handled_by_dc;
  std::map<uint64_t, uint64_t> handled_by_gateway;

  // billing wiring, populated only when enabled
  Address user{};
  Hash32 endpoint_digest{};
  std::optional<logstore::RequestSigner> signer;
  logstore::KeyRegistry keys;
  std::map<uint64_t, GatewayBilling> billing;
  std::map<uint64_t, logstore::LogStore> stores;
  std::vector<logstore::Receipt> receipts;
  int64_t fees_settled = 0;
};

void sync_queue_length(RunState& st, size_t dc_index) {
  st.dcs[dc_index].queue_length = st.queues[dc_index].size();
}

void settle_pending(RunState& st, uint64_t window_end) {
  for (auto& [gid, gb] : st.billing) {
    if (gb.pending.empty()) {
      continue;
    }
    logstore::LogStore& store = st.stores.at(gid);
    logstore::Receipt receipt = logstore::build_receipt(
        gb.address, st.user, gb.window_start, window_end, gb.pending, store,
        st.keys);
    st.led.settle_receipt(receipt, receipt.total_fee,
                          [&](const logstore::Receipt& r) {
                            return logstore::verify_receipt(r, store, st.keys);
                          });
    st.fees_settled += receipt.total_fee;
    st.receipts.push_back(std::move(receipt));
    gb.window_start = window_end + 1;
    gb.pending.clear();
  }
}

void maybe_settle_on_watermark(RunState& st, uint64_t tick) {
  const ledger::BillingAccount* acct = st.led.find_billing(st.user);
  if (acct && acct->accrued > 0 && acct->accrued >= acct->watermark) {
    settle_pending(st, tick);
  }
}

void handle_arrival(RunState& st, uint64_t tick, uint64_t call_id) {
  const ScenarioConfig& cfg = st.config;
  const size_t k = st.dcs.size();
  uint64_t height = tick / cfg.blocks_interval;
  Hash32 beacon = st.led.beacon(height);

  size_t receiving = 0;
  if (cfg.arrival_mode == "random") {
    receiving = sched::draw_arrival_index(beacon, call_id, k);
  }

  size_t current = receiving;
  size_t hops = 0;
  const size_t max_hops = cfg.multi_hop ? k : 1;
  while (true) {
    size_t candidate = current;
    size_t next = current;
    if (cfg.policy != sched::Policy::None && hops < max_hops) {
      if (hops == 0) {
        candidate = sched::draw_candidate_index(beacon, call_id, k, current);
      } else {
        ByteWriter w;
        w.raw(be64(call_id)).str("hop").u64(hops);
        Bytes tag = w.bytes();
        size_t idx = sched::draw_uniform(
            beacon, std::span<const uint8_t>(tag), k - 1);
        candidate = idx >= current ? idx + 1 : idx;
      }
      if (cfg.policy == sched::Policy::Default) {
        sched::DataCenterState rv{st.dcs[current].id, st.dcs[current].capacity,
                                  st.cache.queue_by_dc.at(st.dcs[current].id),
                                  {}};
        sched::DataCenterState cv{st.dcs[candidate].id,
                                  st.dcs[candidate].capacity,
                                  st.cache.queue_by_dc.at(st.dcs[candidate].id),
                                  {}};
        next = (&sched::route_default(rv, cv) == &cv) ? candidate : current;
      } else {
        uint64_t threshold =
            st.dcs[current].capacity * cfg.overload_multiplier;
        const sched::DataCenterState& picked = sched::route_choice2(
            st.dcs[current], st.dcs[candidate], threshold);
        next = (&picked == &st.dcs[candidate]) ? candidate : current;
      }
    }

    uint64_t gateway = sched::select_gateway(st.dcs[next], beacon, call_id);
    st.decisions.push_back(sched::RoutingDecision{
        call_id, tick, st.dcs[current].id, st.dcs[candidate].id,
        st.dcs[next].id, gateway, height, cfg.policy});

    if (next != current) {
      ++st.forwarded;
      ++hops;
      current = next;
      if (cfg.multi_hop && hops < max_hops) {
        continue;  // the landing DC may forward again
      }
    }

    QueuedCall qc{call_id, tick, gateway};
    if (hops > 0 && cfg.forward_delay > 0) {
      st.delayed[tick + cfg.forward_delay].emplace_back(current, qc);
    } else {
      st.queues[current].push_back(qc);
      sync_queue_length(st, current);
    }

    if (cfg.billing.enabled) {
      logstore::SignedRequest req = st.signer->sign(
          call_id, st.endpoint_digest, call_id, cfg.fee_per_call);
      st.billing.at(gateway).pending.push_back(
          logstore::ProcessedRequest{req, tick});
      st.led.accrue_usage(st.user, cfg.fee_per_call);
    }
    break;
  }
}

void handle_service(RunState& st, uint64_t tick, EventQueue& q) {
  auto dit = st.delayed.find(tick);
  if (dit != st.delayed.end()) {
    for (auto& [dc_index, qc] : dit->second) {
      st.queues[dc_index].push_back(qc);
      sync_queue_length(st, dc_index);
    }
    st.delayed.erase(dit);
  }

  for (size_t i = 0; i < st.dcs.size(); ++i) {
    auto& queue = st.queues[i];
    uint64_t budget = st.dcs[i].capacity;
    while (budget > 0 && !queue.empty()) {
      QueuedCall call = queue.front();
      queue.pop_front();
      st.queue_time_sum += tick - call.arrival;
      st.handled_by_dc[st.dcs[i].id]++;
      st.handled_by_gateway[call.gateway]++;
      ++st.served;
      --budget;
    }
    sync_queue_length(st, i);
  }

  if (st.config.billing.enabled) {
    maybe_settle_on_watermark(st, tick);
  }
  st.last_tick = tick;
  if (st.served < st.config.total_calls) {
    q.push(tick + 1, EventKind::Service);
  }
}

}  // namespace

RunResult run(const ScenarioConfig& config, uint32_t run_index) {
  validate(config);
  const uint32_t k = config.num_data_centers;
  const uint32_t g = config.gateways_per_dc;

  ledger::LedgerConfig lcfg;
  lcfg.min_stake = config.billing.min_stake;
  lcfg.gateway_quota_per_dc = std::max<uint32_t>(4, g);
  lcfg.watermark_fraction = config.billing.watermark_fraction;
  lcfg.cycle_length = config.billing.cycle_length;

  RunState st{.config = config, .led = ledger::Ledger(lcfg)};
  st.run_seed = run_seed_hash(config.seed, run_index);
  st.dcs.resize(k);
  st.queues.resize(k);

  for (uint32_t i = 0; i < k; ++i) {
    st.led.register_data_center(config.dc_id(i));
  }
  for (uint32_t i = 0; i < k; ++i) {
    st.dcs[i].id = config.dc_id(i);
    st.dcs[i].capacity = config.capacity_of(i);
    st.cache.queue_by_dc[st.dcs[i].id] = 0;
    for (uint32_t j = 0; j < g; ++j) {
      std::string label =
          "provider:" + st.dcs[i].id + ":" + std::to_string(j);
      Address addr = crypto::address_from_label(label);
      st.led.create_account(addr, config.billing.gateway_stake);
      uint64_t gid = st.led.register_gateway(addr, st.dcs[i].id,
                                             config.billing.gateway_stake);
      st.dcs[i].gateways.push_back(gid);
      st.dc_of_gateway[gid] = st.dcs[i].id;
      st.gateway_address[gid] = addr;
    }
  }
  st.cache.refresh_period = config.refresh_period;

  const std::string endpoint_path = "/fn/demo";
  st.led.register_endpoint(st.gateway_address.begin()->second, endpoint_path,
                           true);

  int64_t supply_start = 0;
  if (config.billing.enabled) {
    st.user = crypto::address_from_label("user:0");
    Hash32 user_key = crypto::key_from_label("user:0");
    st.led.create_account(st.user, 0);
    st.led.deposit_billing(st.user, config.billing.user_deposit);
    st.keys.emplace(st.user, user_key);
    st.signer.emplace(st.user, user_key);
    st.endpoint_digest = crypto::sha256(endpoint_path);
    for (const auto& [gid, addr] : st.gateway_address) {
      st.billing.emplace(gid, GatewayBilling{addr, {}, 0});
      st.stores.emplace(
          gid, logstore::LogStore(
                   crypto::key_from_label("gwlog:" + std::to_string(gid))));
    }
    supply_start = st.led.total_tokens();
  }

  const double rate = config.effective_arrival_rate();
  const uint64_t last_arrival_tick = static_cast<uint64_t>(
      std::floor(static_cast<double>(config.total_calls - 1) / rate));

  EventQueue q;
  for (uint64_t t = 0;;) {
    q.push(t, EventKind::Block);
    if (last_arrival_tick - t < config.blocks_interval) break;
    t += config.blocks_interval;
  }
  for (uint64_t t = 0;;) {
    q.push(t, EventKind::CacheRefresh);
    if (last_arrival_tick - t < config.refresh_period) break;
    t += config.refresh_period;
  }
  for (uint64_t j = 0; j < config.total_calls; ++j) {
    uint64_t t = static_cast<uint64_t>(
        std::floor(static_cast<double>(j) / rate));
    q.push(t, EventKind::Arrival, j);
  }
  q.push(0, EventKind::Service);
  if (config.billing.enabled) {
    q.push(config.billing.cycle_length, EventKind::BillingCycle);
  }

  while (!q.empty()) {
    Event e = q.pop();
    switch (e.kind) {
      case EventKind::Block: {
        st.led.advance_time(e.tick);
        uint64_t height = st.led.chain_height();
        ByteWriter w;
        w.raw(st.run_seed).u64(height);
        st.led.append_block(crypto::sha256(w.bytes()));
        break;
      }
      case EventKind::CacheRefresh: {
        std::map<std::string, uint64_t> snapshot;
        for (size_t i = 0; i < st.dcs.size(); ++i) {
          snapshot[st.dcs[i].id] = st.queues[i].size();
        }
        uint64_t height =
            st.led.chain_height() ? st.led.chain_height() - 1 : 0;
        st.led.publish_load_feed(snapshot, height);
        sched::refresh_load_cache(st.cache, st.led, e.tick);
        break;
      }
      case EventKind::BillingCycle: {
        if (e.tick > 0) {
          settle_pending(st, e.tick - 1);
        }
        if (st.served < config.total_calls) {
          q.push(e.tick + config.billing.cycle_length,
                 EventKind::BillingCycle);
        }
        break;
      }
      case EventKind::Heartbeat:
        break;  // mesh scenarios run through their own loop
      case EventKind::Arrival:
        handle_arrival(st, e.tick, e.payload);
        break;
      case EventKind::Service:
        handle_service(st, e.tick, q);
        break;
    }
  }

  RunResult result;
  if (config.billing.enabled) {
    settle_pending(st, st.last_tick);
    result.billing.user_deposit_start = config.billing.user_deposit;
    result.billing.user_deposit_end = st.led.find_billing(st.user)->deposit;
    result.billing.total_fees_settled = st.fees_settled;
    result.billing.receipts_settled = st.receipts.size();
    result.billing.supply_start = supply_start;
    result.billing.supply_end = st.led.total_tokens();
    for (const auto& [gid, addr] : st.gateway_address) {
      result.billing.gateway_balances[gid] = st.led.balance(addr);
    }
  }

  result.metrics.run_index = run_index;
  result.metrics.total_calls = config.total_calls;
  result.metrics.average_queue_time =
      static_cast<double>(st.queue_time_sum) /
      static_cast<double>(config.total_calls);
  result.metrics.handled_by_dc = std::move(st.handled_by_dc);
  result.metrics.handled_by_gateway = std::move(st.handled_by_gateway);
  result.metrics.forwarded_calls = st.forwarded;

  std::vector<sched::GatewayLoad> loads;
  for (const auto& [gid, dc] : st.dc_of_gateway) {
    auto it = result.metrics.handled_by_gateway.find(gid);
    uint64_t handled =
        it == result.metrics.handled_by_gateway.end() ? 0 : it->second;
    loads.push_back(sched::GatewayLoad{gid, dc, handled});
  }
  result.metrics.payments = sched::compute_payments(
      loads, config.payment_policy(), static_cast<double>(config.fee_per_call));
  result.metrics.ledger_digest = st.led.state_digest();

  result.decisions = std::move(st.decisions);
  result.beacons = st.led.blocks();
  result.receipts = std::move(st.receipts);
  return result;
}

BatchResult run_batch(const ScenarioConfig& config) {
  BatchResult batch;
  double sum = 0.0;
  for (uint32_t i = 0; i < config.runs; ++i) {
    batch.runs.push_back(run(config, i));
    sum += batch.runs.back().metrics.average_queue_time;
  }
  batch.mean_queue_time = sum / static_cast<double>(config.runs);
  return batch;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    cells.push_back("");
  }
  return cells;
}

uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    size_t used = 0;
    uint64_t v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("malformed ") + what + ": " + s);
  }
}

constexpr const char* kTraceHeader =
    "call_id,tick,receiving_dc,candidate_dc,chosen_dc,chosen_gateway,"
    "beacon_height,policy";

}  // namespace

std::string decisions_csv(const std::vector<sched::RoutingDecision>& rows) {
  std::ostringstream out;
  out << kTraceHeader << '\n';
  for (const auto& d : rows) {
    out << d.call_id << ',' << d.tick << ',' << d.receiving_dc << ','
        << d.candidate_dc << ',' << d.chosen_dc << ',' << d.chosen_gateway
        << ',' << d.beacon_height << ',' << sched::policy_name(d.policy)
        << '\n';
  }
  return out.str();
}

std::vector<sched::RoutingDecision> decisions_from_csv(
    const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) {
    throw std::invalid_argument("malformed trace: unexpected header");
  }
  std::vector<sched::RoutingDecision> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 8) {
      throw std::invalid_argument("malformed trace: line " +
                                  std::to_string(lineno) + " has " +
                                  std::to_string(cells.size()) + " fields");
    }
    sched::RoutingDecision d;
    d.call_id = parse_u64(cells[0], "call_id");
    d.tick = parse_u64(cells[1], "tick");
    d.receiving_dc = cells[2];
    d.candidate_dc = cells[3];
    d.chosen_dc = cells[4];
    d.chosen_gateway = parse_u64(cells[5], "chosen_gateway");
    d.beacon_height = parse_u64(cells[6], "beacon_height");
    d.policy = sched::policy_from_name(cells[7]);
    rows.push_back(std::move(d));
  }
  return rows;
}

std::string beacons_json(uint32_t run_index,
                         const std::vector<ledger::Block>& blocks) {
  json j;
  j["run_index"] = run_index;
  json arr = json::array();
  for (const auto& b : blocks) {
    json e;
    e["height"] = b.height;
    e["parent_hash"] = to_hex(b.parent_hash);
    e["state_digest"] = to_hex(b.state_digest);
    e["hash"] = to_hex(b.hash);
    arr.push_back(e);
  }
  j["blocks"] = arr;
  return j.dump(2);
}

BeaconFile beacons_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed beacons file: ") +
                                e.what());
  }
  BeaconFile file;
  try {
    file.run_index = j.at("run_index").get<uint32_t>();
    for (const auto& e : j.at("blocks")) {
      ledger::Block b;
      b.height = e.at("height").get<uint64_t>();
      b.parent_hash = hash32_from_hex(e.at("parent_hash").get<std::string>());
      b.state_digest =
          hash32_from_hex(e.at("state_digest").get<std::string>());
      b.hash = hash32_from_hex(e.at("hash").get<std::string>());
      file.blocks.push_back(b);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed beacons file: ") +
                                e.what());
  }
  return file;
}

std::string metrics_csv(const ScenarioConfig& config,
                        const std::vector<RunMetrics>& rows) {
  std::ostringstream out;
  out << "run_index,policy,arrival_mode,num_data_centers,total_calls,"
         "average_queue_time,forwarded_calls";
  for (uint32_t i = 0; i < config.num_data_centers; ++i) {
    out << ",handled_" << config.dc_id(i);
  }
  out << '\n';
  for (const auto& m : rows) {
    out << m.run_index << ',' << sched::policy_name(config.policy) << ','
        << config.arrival_mode << ',' << config.num_data_centers << ','
        << m.total_calls << ',' << format_double(m.average_queue_time) << ','
        << m.forwarded_calls;
    for (uint32_t i = 0; i < config.num_data_centers; ++i) {
      auto it = m.handled_by_dc.find(config.dc_id(i));
      out << ',' << (it == m.handled_by_dc.end() ? 0 : it->second);
    }
    out << '\n';
  }
  return out.str();
}

std::vector<MetricsRow> metrics_from_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("malformed metrics: empty file");
  }
  auto header = split_csv_line(line);
  if (header.size() < 7 || header[0] != "run_index" || header[1] != "policy" ||
      header[2] != "arrival_mode" || header[3] != "num_data_centers" ||
      header[4] != "total_calls" || header[5] != "average_queue_time" ||
      header[6] != "forwarded_calls") {
    throw std::invalid_argument("malformed metrics: unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() < 7) {
      throw std::invalid_argument("malformed metrics: short row");
    }
    MetricsRow r;
    r.run_index = static_cast<uint32_t>(parse_u64(cells[0], "run_index"));
    r.policy = cells[1];
    r.arrival_mode = cells[2];
    r.num_data_centers =
        static_cast<uint32_t>(parse_u64(cells[3], "num_data_centers"));
    r.total_calls = parse_u64(cells[4], "total_calls");
    try {
      r.average_queue_time = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed metrics: bad average_queue_time");
    }
    r.forwarded_calls = parse_u64(cells[6], "forwarded_calls");
    rows.push_back(std::move(r));
  }
  return rows;
}

VerifyResult replay_verify(const std::vector<sched::RoutingDecision>& trace,
                           const BeaconFile& beacons,
                           const ScenarioConfig& config) {
  RunResult expected = run(config, beacons.run_index);

  std::map<uint64_t, Hash32> supplied;
  for (const auto& b : beacons.blocks) {
    supplied[b.height] = b.hash;
  }
  for (const auto& blk : expected.beacons) {
    auto it = supplied.find(blk.height);
    if (it == supplied.end()) {
      return VerifyResult{false,
                          "missing beacon height " + std::to_string(blk.height),
                          std::nullopt};
    }
    if (it->second != blk.hash) {
      return VerifyResult{
          false, "beacon mismatch at height " + std::to_string(blk.height),
          std::nullopt};
    }
  }

  size_t common = std::min(trace.size(), expected.decisions.size());
  for (size_t i = 0; i < common; ++i) {
    if (!(trace[i] == expected.decisions[i])) {
      return VerifyResult{false, "decision mismatch",
                          expected.decisions[i].call_id};
    }
  }
  if (trace.size() != expected.decisions.size()) {
    uint64_t call_id = trace.size() > expected.decisions.size()
                           ? trace[common].call_id
                           : expected.decisions[common].call_id;
    return VerifyResult{false, "trace length mismatch", call_id};
  }
  return VerifyResult{true, "verified", std::nullopt};
}

namespace {

int policy_rank(const std::string& p) {
  if (p == "default") return 0;
  if (p == "choice2") return 1;
  return 2;
}

int mode_rank(const std::string& m) { return m == "random" ? 0 : 1; }

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  std::map<std::tuple<int, int, uint32_t, std::string, std::string>,
           std::pair<double, size_t>>
      groups;
  for (const auto& r : rows) {
    auto key = std::make_tuple(policy_rank(r.policy), mode_rank(r.arrival_mode),
                               r.num_data_centers, r.policy, r.arrival_mode);
    auto& [sum, n] = groups[key];
    sum += r.average_queue_time;
    n += 1;
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, agg] : groups) {
    SummaryRow row;
    row.policy = std::get<3>(key);
    row.arrival_mode = std::get<4>(key);
    row.num_data_centers = std::get<2>(key);
    row.average_queue_time = agg.first / static_cast<double>(agg.second);
    row.runs = agg.second;
    out.push_back(std::move(row));
  }
  return out;
}

std::string summary_table_text(const std::vector<SummaryRow>& rows) {
  std::set<uint32_t> ks;
  std::vector<std::pair<std::string, std::string>> scenarios;
  std::map<std::pair<std::string, std::string>, std::map<uint32_t, double>>
      cells;
  for (const auto& r : rows) {
    ks.insert(r.num_data_centers);
    auto key = std::make_pair(r.policy, r.arrival_mode);
    if (!cells.count(key)) {
      scenarios.push_back(key);
    }
    cells[key][r.num_data_centers] = r.average_queue_time;
  }
  std::sort(scenarios.begin(), scenarios.end(),
            [](const auto& a, const auto& b) {
              return std::make_pair(policy_rank(a.first), mode_rank(a.second)) <
                     std::make_pair(policy_rank(b.first), mode_rank(b.second));
            });

  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-24s", "policy/arrivals");
  out << buf;
  for (uint32_t k : ks) {
    std::snprintf(buf, sizeof(buf), "%10s", ("k=" + std::to_string(k)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& key : scenarios) {
    std::string label = key.first + "/" + key.second;
    std::snprintf(buf, sizeof(buf), "%-24s", label.c_str());
    out << buf;
    for (uint32_t k : ks) {
      auto it = cells[key].find(k);
      if (it == cells[key].end()) {
        std::snprintf(buf, sizeof(buf), "%10s", "");
      } else {
        std::snprintf(buf, sizeof(buf), "%10.3f", it->second);
      }
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

std::string summary_table_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "policy,arrival_mode,num_data_centers,average_queue_time,runs\n";
  for (const auto& r : rows) {
    out << r.policy << ',' << r.arrival_mode << ',' << r.num_data_centers
        << ',' << format_double(r.average_queue_time) << ',' << r.runs << '\n';
  }
  return out.str();
}

}  // namespace faasim::sim
