#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faasim/common/bytes.hpp"
#include "faasim/ledger/ledger.hpp"

namespace faasim::sched {

enum class Policy { Default, Choice2, None };

const char* policy_name(Policy p);
Policy policy_from_name(const std::string& name);

struct DataCenterState {
  std::string id;
  uint64_t capacity = 1;
  uint64_t queue_length = 0;
  std::vector<uint64_t> gateways;
};

// Periodically refreshed view of the on-ledger load feed. Decisions made
// between refreshes see stale queue lengths on purpose.
struct LoadCache {
  std::map<std::string, uint64_t> queue_by_dc;
  uint64_t snapshot_height = 0;
  uint64_t last_refresh = 0;
  uint64_t refresh_period = 1;
};

struct RoutingDecision {
  uint64_t call_id = 0;
  uint64_t tick = 0;
  std::string receiving_dc;
  std::string candidate_dc;
  std::string chosen_dc;
  uint64_t chosen_gateway = 0;
  uint64_t beacon_height = 0;
  Policy policy = Policy::Default;

  bool operator==(const RoutingDecision&) const = default;
};

struct PaymentPolicy {
  std::map<std::string, double> target_distribution;
  double tolerance = 0.1;
  double overage_penalty = 0.0;
};

struct GatewayLoad {
  uint64_t gateway = 0;
  std::string data_center;
  uint64_t handled = 0;
};

// Uniform draw in [0, k) seeded by a block hash. The digest stream is
// sha256(beacon ‖ tag ‖ counter_be64); the first 8 bytes (big-endian) form
// the sample, and samples ≥ floor(2^64 / k) · k are rejected so the
// modulo is unbiased.
uint64_t draw_uniform(const Hash32& beacon_hash, std::span<const uint8_t> tag,
                      uint64_t k);

// tag = call_id as 8 big-endian bytes
uint64_t draw_uniform(const Hash32& beacon_hash, uint64_t call_id, uint64_t k);

// Picks one of the k − 1 data centers other than `receiving_index`,
// returning its index in [0, k).
size_t draw_candidate_index(const Hash32& beacon_hash, uint64_t call_id,
                            size_t num_dcs, size_t receiving_index);

// Index drawn with tag = call_id ‖ "arr"; used to scatter arrivals.
size_t draw_arrival_index(const Hash32& beacon_hash, uint64_t call_id,
                          size_t num_dcs);

// Forward iff the receiving DC looks strictly busier than the candidate.
// Equal queue lengths stay local. Both queue lengths are whatever view the
// caller passes in (normally the cached snapshot).
const DataCenterState& route_default(const DataCenterState& receiving,
                                     const DataCenterState& candidate);

// Forward iff the receiving DC's own queue exceeds its overload threshold;
// the candidate's load is never consulted. The threshold defaults to the
// DC's capacity when not supplied.
const DataCenterState& route_choice2(
    const DataCenterState& receiving, const DataCenterState& candidate,
    std::optional<uint64_t> overload_threshold = std::nullopt);

// tag = call_id ‖ "gw"
uint64_t select_gateway(const DataCenterState& dc, const Hash32& beacon_hash,
                        uint64_t call_id);

// Replaces the snapshot from the ledger's load feed when a full period has
// elapsed; otherwise leaves the cache untouched. Never mutates the ledger.
// Returns true when a refresh happened.
bool refresh_load_cache(LoadCache& cache, const ledger::Ledger& view,
                        uint64_t now);

// Per-gateway token payment. A gateway earns fee_per_call for every call
// up to its limit (expected share scaled by 1 + tolerance) and pays
// overage_penalty for every call beyond it.
std::map<uint64_t, double> compute_payments(
    const std::vector<GatewayLoad>& loads, const PaymentPolicy& policy,
    double fee_per_call);

}  // namespace faasim::sched
