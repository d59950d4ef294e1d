#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "faasim/common/bytes.hpp"
#include "faasim/common/crypto.hpp"
#include "faasim/ledger/ledger.hpp"

namespace faasim::events {

struct MeshParams {
  uint32_t d = 6;
  uint32_t d_lo = 4;
  uint32_t d_hi = 12;
  uint32_t fanout_size = 6;
  double score_threshold = 0.0;
  uint64_t heartbeat_period = 1;
  uint64_t fanout_ttl = 60;
  size_t max_payload = 256 * 1024;
};

struct GossipMessage {
  Hash32 msg_id{};
  std::string topic;
  Bytes payload;
  std::string publisher;
  uint64_t seqno = 0;
};

// msg_id = sha256(publisher ‖ seqno_be64 ‖ payload)
Hash32 message_id(const std::string& publisher, uint64_t seqno,
                  const Bytes& payload);

struct DeliveryRecord {
  uint64_t tick = 0;
  Hash32 msg_id{};
  std::string from;
  std::string to;
  std::string topic;
};

struct PeerState {
  std::string id;
  double score = 0.0;
  std::set<std::string> subscribed_topics;
  std::map<std::string, std::set<std::string>> mesh_peers;
  struct Fanout {
    std::set<std::string> peers;
    uint64_t last_used = 0;
  };
  std::map<std::string, Fanout> fanout_peers;
};

struct TriggerBinding {
  std::map<std::string, std::string> endpoint_by_topic;
};

struct TriggeredCall {
  uint64_t call_id = 0;
  std::string endpoint;
  Address provider{};
  std::string topic;
  Hash32 msg_id{};
};

// Resolves the topic's bound endpoint through the ledger and emits the call
// that enters the scheduling pipeline. call_id is derived from the message
// id so duplicate dispatches are detectable downstream.
TriggeredCall dispatch_trigger(const TriggerBinding& binding,
                               const GossipMessage& message,
                               const ledger::Ledger& view);

// Deterministic single-loop simulation of a scored publish/subscribe mesh.
// Full messages travel along topology edges with per-edge delays; mesh
// members forward on receipt, and each heartbeat every peer offers messages
// it holds to subscribed non-mesh neighbors that have not had them yet, so
// a connected topology of in-good-standing peers always converges to full
// delivery. Peers below the score threshold are skipped when grafting and
// when a delivery would land.
class MeshNetwork {
 public:
  explicit MeshNetwork(MeshParams params = {});

  void add_peer(const std::string& id, double initial_score = 0.0);
  void connect(const std::string& a, const std::string& b,
               uint64_t delay_ticks = 1);

  void subscribe(const std::string& peer, const std::string& topic);
  void update_score(const std::string& reporter, const std::string& observed,
                    double delta);

  // Mesh upkeep for one peer: graft toward D when below D_lo, prune to D
  // when above D_hi, drop stale fanout sets, then offer held messages to
  // non-mesh neighbors. Random picks come from the beacon.
  void heartbeat(const std::string& peer, const Hash32& beacon_hash);

  // Injects a message at the publisher. Subscribed publishers send to their
  // mesh; unsubscribed ones send to a beacon-chosen fanout set. Delivery
  // happens over subsequent step() calls.
  GossipMessage publish(const std::string& peer, const std::string& topic,
                        Bytes payload, const Hash32& beacon_hash);

  // Processes the current tick: heartbeats (when due) for every peer in id
  // order, then all deliveries scheduled for this tick; finally advances
  // the clock.
  void step(const Hash32& beacon_hash);

  // Steps until no message is in flight and a full heartbeat round sent
  // nothing new. Throws if max_ticks elapses first.
  void run_until_quiet(const std::function<Hash32(uint64_t)>& beacon_at,
                       uint64_t max_ticks = 100000);

  uint64_t now() const { return now_; }
  const MeshParams& params() const { return params_; }
  const PeerState& peer(const std::string& id) const;
  std::vector<std::string> peer_ids() const;
  const std::vector<DeliveryRecord>& deliveries() const { return trace_; }
  const std::vector<Hash32>& undeliverable() const { return undeliverable_; }
  bool has_seen(const std::string& peer, const Hash32& msg_id) const;
  // Messages delivered to (or published by) the peer, in arrival order.
  const std::vector<Hash32>& held_messages(const std::string& peer) const;
  const GossipMessage& message(const Hash32& msg_id) const;

 private:
  struct Flight {
    std::string from;
    std::string to;
    Hash32 msg_id{};
  };
  struct PeerInternal {
    PeerState state;
    std::map<std::string, uint64_t> neighbors;  // id -> delay ticks
    std::set<Hash32> seen;
    std::vector<Hash32> held;  // seen, in insertion order
    std::set<std::pair<std::string, Hash32>> sent;
    uint64_t next_seqno = 0;
  };

  PeerInternal& require_peer(const std::string& id);
  const PeerInternal& require_peer(const std::string& id) const;
  bool in_good_standing(const std::string& id) const;
  void send(PeerInternal& from, const std::string& to, const Hash32& msg_id);
  void deliver(const Flight& flight);
  void accept_message(PeerInternal& peer, const GossipMessage& msg);
  std::vector<std::string> pick_random(std::vector<std::string> pool,
                                       size_t count, const Hash32& beacon,
                                       const std::string& peer,
                                       const std::string& topic,
                                       const char* purpose);

  MeshParams params_;
  uint64_t now_ = 0;
  uint64_t sends_this_tick_ = 0;
  std::map<std::string, PeerInternal> peers_;
  std::map<Hash32, GossipMessage> messages_;
  std::map<uint64_t, std::vector<Flight>> in_flight_;
  std::vector<DeliveryRecord> trace_;
  std::vector<Hash32> undeliverable_;
};

// Topology file: {"peers": [{"id", "score"?}...],
//                 "edges": [{"a", "b", "delay"?}...]}
MeshNetwork load_topology(const std::string& json_text, MeshParams params = {});

// CSV columns: tick, msg_id, from, to, topic
std::string delivery_trace_csv(const std::vector<DeliveryRecord>& records);

}  // namespace faasim::events
