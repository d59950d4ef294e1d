#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "faasim/common/bytes.hpp"
#include "faasim/events/mesh.hpp"
#include "faasim/ledger/ledger.hpp"
#include "faasim/logstore/logstore.hpp"
#include "faasim/sched/scheduler.hpp"

namespace faasim::sim {

struct BillingConfig {
  bool enabled = false;
  int64_t user_deposit = 1000000;
  double watermark_fraction = 0.8;
  uint64_t cycle_length = 1000;
  int64_t gateway_stake = 10;
  int64_t min_stake = 10;
};

struct ScenarioConfig {
  uint64_t seed = 0;
  uint32_t num_data_centers = 6;
  uint32_t gateways_per_dc = 3;
  uint64_t capacity_per_dc = 1;
  std::vector<uint64_t> capacities;  // optional per-DC override
  sched::Policy policy = sched::Policy::Default;
  std::string arrival_mode = "random";  // random | single_dc
  uint64_t total_calls = 10000;
  uint32_t runs = 5;
  // Calls per tick. When 0, derived as
  // arrival_rate_multiplier × aggregate capacity.
  double arrival_rate = 0.0;
  double arrival_rate_multiplier = 0.95;
  uint64_t refresh_period = 1;
  uint64_t blocks_interval = 1;
  uint64_t forward_delay = 0;
  uint64_t overload_multiplier = 3;
  bool multi_hop = false;
  int64_t fee_per_call = 1;
  double payment_tolerance = 0.1;
  double overage_penalty = 2.0;
  // Per-DC target fractions; empty means an even split.
  std::map<std::string, double> target_distribution;
  BillingConfig billing;
  events::MeshParams mesh;
  std::string topology_json;  // optional mesh topology for event scenarios

  std::string dc_id(uint32_t index) const;
  uint64_t capacity_of(uint32_t index) const;
  uint64_t aggregate_capacity() const;
  double effective_arrival_rate() const;
  sched::PaymentPolicy payment_policy() const;
};

// Throws std::invalid_argument naming the offending key.
ScenarioConfig scenario_from_json(const std::string& text);
ScenarioConfig load_scenario_file(const std::string& path);
// `key=value` with dotted paths (e.g. billing.enabled=true); applied onto
// the raw JSON document before parsing.
void apply_override(std::string& json_text, const std::string& assignment);

struct RunMetrics {
  uint32_t run_index = 0;
  double average_queue_time = 0.0;
  std::map<std::string, uint64_t> handled_by_dc;
  std::map<uint64_t, uint64_t> handled_by_gateway;
  std::map<uint64_t, double> payments;
  uint64_t forwarded_calls = 0;
  uint64_t total_calls = 0;
  Hash32 ledger_digest{};
};

struct BillingSummary {
  int64_t user_deposit_start = 0;
  int64_t user_deposit_end = 0;
  int64_t total_fees_settled = 0;
  size_t receipts_settled = 0;
  int64_t supply_start = 0;
  int64_t supply_end = 0;
  std::map<uint64_t, int64_t> gateway_balances;
};

struct RunResult {
  RunMetrics metrics;
  std::vector<sched::RoutingDecision> decisions;
  std::vector<ledger::Block> beacons;
  std::vector<logstore::Receipt> receipts;
  BillingSummary billing;
};

// Seed material for the per-run beacon chain; block h carries
// state digest sha256(run_seed ‖ h).
Hash32 run_seed_hash(uint64_t seed, uint32_t run_index);

// Lower kind value wins within a tick; insertion order breaks remaining
// ties, so the whole schedule is a strict total order.
enum class EventKind : uint8_t {
  Block = 0,
  CacheRefresh = 1,
  BillingCycle = 2,
  Heartbeat = 3,
  Arrival = 4,
  Service = 5,
};

struct Event {
  uint64_t tick = 0;
  EventKind kind = EventKind::Block;
  uint64_t seq = 0;
  uint64_t payload = 0;
};

class EventQueue {
 public:
  void push(uint64_t tick, EventKind kind, uint64_t payload = 0);
  Event pop();
  bool empty() const { return heap_.empty(); }
  size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const;
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  uint64_t next_seq_ = 0;
};

RunResult run(const ScenarioConfig& config, uint32_t run_index);

struct BatchResult {
  std::vector<RunResult> runs;
  double mean_queue_time = 0.0;
};

BatchResult run_batch(const ScenarioConfig& config);

// --- artifact serialization ---

std::string decisions_csv(const std::vector<sched::RoutingDecision>& rows);
std::vector<sched::RoutingDecision> decisions_from_csv(const std::string& text);

struct BeaconFile {
  uint32_t run_index = 0;
  std::vector<ledger::Block> blocks;
};

std::string beacons_json(uint32_t run_index,
                         const std::vector<ledger::Block>& blocks);
BeaconFile beacons_from_json(const std::string& text);

std::string metrics_csv(const ScenarioConfig& config,
                        const std::vector<RunMetrics>& rows);

struct MetricsRow {
  uint32_t run_index = 0;
  std::string policy;
  std::string arrival_mode;
  uint32_t num_data_centers = 0;
  uint64_t total_calls = 0;
  double average_queue_time = 0.0;
  uint64_t forwarded_calls = 0;
};

std::vector<MetricsRow> metrics_from_csv(const std::string& text);

// --- verification ---

struct VerifyResult {
  bool ok = false;
  std::string reason;
  std::optional<uint64_t> mismatch_call_id;
};

// Re-derives the beacon chain from the scenario seed, checks the supplied
// beacons against it, re-executes the run and compares every decision.
VerifyResult replay_verify(const std::vector<sched::RoutingDecision>& trace,
                           const BeaconFile& beacons,
                           const ScenarioConfig& config);

// --- reporting ---

struct SummaryRow {
  std::string policy;
  std::string arrival_mode;
  uint32_t num_data_centers = 0;
  double average_queue_time = 0.0;
  size_t runs = 0;
};

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);
std::string summary_table_text(const std::vector<SummaryRow>& rows);
std::string summary_table_csv(const std::vector<SummaryRow>& rows);

}  // namespace faasim::sim
