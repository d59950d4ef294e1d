#include "faasim/sched/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace faasim::sched {

const char* policy_name(Policy p) {
  switch (p) {
    case Policy::Default:
      return "default";
    case Policy::Choice2:
      return "choice2";
    case Policy::None:
      return "none";
  }
  return "?";
}

Policy policy_from_name(const std::string& name) {
  if (name == "default") return Policy::Default;
  if (name == "choice2") return Policy::Choice2;
  if (name == "none") return Policy::None;
  throw std::invalid_argument("unknown policy " + name);
}

uint64_t draw_uniform(const Hash32& beacon_hash, std::span<const uint8_t> tag,
                      uint64_t k) {
  if (k == 0) {
    throw std::invalid_argument("domain size must be positive");
  }
  if (k == 1) {
    return 0;
  }
  // 2^64 mod k, computed without overflow; samples at or above
  // 2^64 - remainder would bias the modulo and are redrawn.
  const uint64_t remainder = (UINT64_MAX % k + 1) % k;
  for (uint64_t counter = 0;; ++counter) {
    ByteWriter w;
    w.raw(beacon_hash).raw(tag).u64(counter);
    Hash32 digest = crypto::sha256(w.bytes());
    uint64_t sample = read_be64(digest);
    if (remainder != 0 && sample > UINT64_MAX - remainder) {
      continue;
    }
    return sample % k;
  }
}

uint64_t draw_uniform(const Hash32& beacon_hash, uint64_t call_id,
                      uint64_t k) {
  auto tag = be64(call_id);
  return draw_uniform(beacon_hash, std::span<const uint8_t>(tag), k);
}

size_t draw_candidate_index(const Hash32& beacon_hash, uint64_t call_id,
                            size_t num_dcs, size_t receiving_index) {
  if (num_dcs < 2) {
    throw std::invalid_argument("need at least two data centers to pick a candidate");
  }
  if (receiving_index >= num_dcs) {
    throw std::out_of_range("receiving index out of range");
  }
  size_t idx = draw_uniform(beacon_hash, call_id, num_dcs - 1);
  return idx >= receiving_index ? idx + 1 : idx;
}

size_t draw_arrival_index(const Hash32& beacon_hash, uint64_t call_id,
                          size_t num_dcs) {
  auto id = be64(call_id);
  ByteWriter w;
  w.raw(id).str("arr");
  Bytes tag = w.bytes();
  return draw_uniform(beacon_hash, std::span<const uint8_t>(tag), num_dcs);
}

const DataCenterState& route_default(const DataCenterState& receiving,
                                     const DataCenterState& candidate) {
  return receiving.queue_length > candidate.queue_length ? candidate
                                                         : receiving;
}

const DataCenterState& route_choice2(
    const DataCenterState& receiving, const DataCenterState& candidate,
    std::optional<uint64_t> overload_threshold) {
  uint64_t threshold = overload_threshold.value_or(receiving.capacity);
  return receiving.queue_length > threshold ? candidate : receiving;
}

uint64_t select_gateway(const DataCenterState& dc, const Hash32& beacon_hash,
                        uint64_t call_id) {
  if (dc.gateways.empty()) {
    throw std::invalid_argument("data center " + dc.id + " has no gateways");
  }
  auto id = be64(call_id);
  ByteWriter w;
  w.raw(id).str("gw");
  Bytes tag = w.bytes();
  size_t idx =
      draw_uniform(beacon_hash, std::span<const uint8_t>(tag), dc.gateways.size());
  return dc.gateways[idx];
}

bool refresh_load_cache(LoadCache& cache, const ledger::Ledger& view,
                        uint64_t now) {
  if (now - cache.last_refresh < cache.refresh_period) {
    return false;
  }
  const auto& feed = view.load_feed();
  cache.queue_by_dc = feed.queue_by_dc;
  cache.snapshot_height = feed.height;
  cache.last_refresh = now;
  return true;
}

std::map<uint64_t, double> compute_payments(
    const std::vector<GatewayLoad>& loads, const PaymentPolicy& policy,
    double fee_per_call) {
  double fraction_sum = 0.0;
  for (const auto& [dc, fraction] : policy.target_distribution) {
    if (fraction < 0.0) {
      throw std::invalid_argument("negative target fraction for " + dc);
    }
    fraction_sum += fraction;
  }
  if (std::abs(fraction_sum - 1.0) > 1e-9) {
    throw std::invalid_argument("target distribution must sum to 1");
  }

  uint64_t total_calls = 0;
  std::map<std::string, uint64_t> gateways_in_dc;
  for (const auto& load : loads) {
    total_calls += load.handled;
    gateways_in_dc[load.data_center]++;
  }

  std::map<uint64_t, double> payments;
  for (const auto& load : loads) {
    auto it = policy.target_distribution.find(load.data_center);
    if (it == policy.target_distribution.end()) {
      throw std::invalid_argument("no target fraction for " + load.data_center);
    }
    double expected = static_cast<double>(total_calls) * it->second /
                      static_cast<double>(gateways_in_dc[load.data_center]);
    double limit = expected * (1.0 + policy.tolerance);
    double count = static_cast<double>(load.handled);
    double paid = fee_per_call * std::min(count, limit);
    double penalty = policy.overage_penalty * std::max(0.0, count - limit);
    payments[load.gateway] = paid - penalty;
  }
  return payments;
}

}  // namespace faasim::sched
