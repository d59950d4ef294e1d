#include "faasim/events/mesh.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "faasim/sched/scheduler.hpp"

namespace faasim::events {

using nlohmann::json;

Hash32 message_id(const std::string& publisher, uint64_t seqno,
                  const Bytes& payload) {
  ByteWriter w;
  w.str(publisher).u64(seqno).raw(payload);
  return crypto::sha256(w.bytes());
}

TriggeredCall dispatch_trigger(const TriggerBinding& binding,
                               const GossipMessage& message,
                               const ledger::Ledger& view) {
  auto it = binding.endpoint_by_topic.find(message.topic);
  if (it == binding.endpoint_by_topic.end()) {
    throw std::invalid_argument("no function bound to topic " + message.topic);
  }
  auto resolution = view.resolve_endpoint(it->second);
  if (!resolution.provider) {
    throw std::invalid_argument("bound endpoint is not registered: " +
                                it->second);
  }
  TriggeredCall call;
  call.call_id = read_be64(message.msg_id);
  call.endpoint = it->second;
  call.provider = *resolution.provider;
  call.topic = message.topic;
  call.msg_id = message.msg_id;
  return call;
}

MeshNetwork::MeshNetwork(MeshParams params) : params_(params) {}

void MeshNetwork::add_peer(const std::string& id, double initial_score) {
  PeerInternal p;
  p.state.id = id;
  p.state.score = initial_score;
  auto [_, inserted] = peers_.emplace(id, std::move(p));
  if (!inserted) {
    throw std::invalid_argument("duplicate peer id " + id);
  }
}

void MeshNetwork::connect(const std::string& a, const std::string& b,
                          uint64_t delay_ticks) {
  if (a == b) {
    throw std::invalid_argument("peer cannot link to itself");
  }
  require_peer(a).neighbors[b] = delay_ticks;
  require_peer(b).neighbors[a] = delay_ticks;
}

void MeshNetwork::subscribe(const std::string& peer, const std::string& topic) {
  require_peer(peer).state.subscribed_topics.insert(topic);
}

void MeshNetwork::update_score(const std::string& reporter,
                               const std::string& observed, double delta) {
  require_peer(reporter);
  require_peer(observed).state.score += delta;
}

MeshNetwork::PeerInternal& MeshNetwork::require_peer(const std::string& id) {
  auto it = peers_.find(id);
  if (it == peers_.end()) {
    throw std::out_of_range("unknown peer " + id);
  }
  return it->second;
}

const MeshNetwork::PeerInternal& MeshNetwork::require_peer(
    const std::string& id) const {
  auto it = peers_.find(id);
  if (it == peers_.end()) {
    throw std::out_of_range("unknown peer " + id);
  }
  return it->second;
}

bool MeshNetwork::in_good_standing(const std::string& id) const {
  return require_peer(id).state.score >= params_.score_threshold;
}

std::vector<std::string> MeshNetwork::pick_random(
    std::vector<std::string> pool, size_t count, const Hash32& beacon,
    const std::string& peer, const std::string& topic, const char* purpose) {
  std::vector<std::string> picked;
  count = std::min(count, pool.size());
  for (size_t i = 0; i < count; ++i) {
    ByteWriter w;
    w.str(peer).str("\n").str(topic).str("\n").str(purpose).u64(i);
    Bytes tag = w.bytes();
    size_t idx = sched::draw_uniform(beacon, std::span<const uint8_t>(tag),
                                     pool.size());
    picked.push_back(pool[idx]);
    pool.erase(pool.begin() + static_cast<ptrdiff_t>(idx));
  }
  return picked;
}

void MeshNetwork::heartbeat(const std::string& peer_id,
                            const Hash32& beacon_hash) {
  PeerInternal& peer = require_peer(peer_id);

  for (const std::string& topic : peer.state.subscribed_topics) {
    auto& mesh = peer.state.mesh_peers[topic];

    if (mesh.size() < params_.d_lo) {
      std::vector<std::string> eligible;
      for (const auto& [n, _] : peer.neighbors) {
        if (mesh.count(n)) continue;
        const PeerInternal& other = require_peer(n);
        if (!other.state.subscribed_topics.count(topic)) continue;
        if (other.state.score < params_.score_threshold) continue;
        eligible.push_back(n);
      }
      size_t want = params_.d - mesh.size();
      for (const std::string& n : pick_random(std::move(eligible), want,
                                              beacon_hash, peer_id, topic,
                                              "graft")) {
        mesh.insert(n);
        require_peer(n).state.mesh_peers[topic].insert(peer_id);
      }
    } else if (mesh.size() > params_.d_hi) {
      std::vector<std::string> members(mesh.begin(), mesh.end());
      size_t excess = mesh.size() - params_.d;
      for (const std::string& n : pick_random(std::move(members), excess,
                                              beacon_hash, peer_id, topic,
                                              "prune")) {
        mesh.erase(n);
        require_peer(n).state.mesh_peers[topic].erase(peer_id);
      }
    }

    // Below-threshold members are cut regardless of degree.
    for (auto it = mesh.begin(); it != mesh.end();) {
      if (!in_good_standing(*it)) {
        require_peer(*it).state.mesh_peers[topic].erase(peer_id);
        it = mesh.erase(it);
      } else {
        ++it;
      }
    }
  }

  for (auto it = peer.state.fanout_peers.begin();
       it != peer.state.fanout_peers.end();) {
    if (now_ - it->second.last_used > params_.fanout_ttl) {
      it = peer.state.fanout_peers.erase(it);
    } else {
      ++it;
    }
  }

  // Offer every held message to subscribed neighbors that have not received
  // it from us yet. Mesh forwarding on receipt is the fast path; this sweep
  // guarantees every edge is eventually exercised, so a connected topology
  // always reaches full delivery. Held messages on unsubscribed topics exist
  // only at their publisher, which keeps offering them the same way.
  for (const Hash32& msg_id : peer.held) {
    const GossipMessage& msg = messages_.at(msg_id);
    for (const auto& [n, _] : peer.neighbors) {
      const PeerInternal& other = require_peer(n);
      if (!other.state.subscribed_topics.count(msg.topic)) continue;
      if (other.state.score < params_.score_threshold) continue;
      send(peer, n, msg_id);
    }
  }
}

GossipMessage MeshNetwork::publish(const std::string& peer_id,
                                   const std::string& topic, Bytes payload,
                                   const Hash32& beacon_hash) {
  if (payload.size() > params_.max_payload) {
    throw std::invalid_argument("payload exceeds the message size limit");
  }
  PeerInternal& peer = require_peer(peer_id);

  GossipMessage msg;
  msg.topic = topic;
  msg.payload = std::move(payload);
  msg.publisher = peer_id;
  msg.seqno = peer.next_seqno++;
  msg.msg_id = message_id(msg.publisher, msg.seqno, msg.payload);
  messages_.emplace(msg.msg_id, msg);
  accept_message(peer, msg);

  bool any_subscriber = false;
  for (const auto& [id, other] : peers_) {
    if (id != peer_id && other.state.subscribed_topics.count(topic)) {
      any_subscriber = true;
      break;
    }
  }
  if (!any_subscriber) {
    undeliverable_.push_back(msg.msg_id);
    return msg;
  }

  if (peer.state.subscribed_topics.count(topic)) {
    auto mesh = peer.state.mesh_peers[topic];
    for (const std::string& n : mesh) {
      if (!in_good_standing(n)) continue;
      send(peer, n, msg.msg_id);
    }
  } else {
    auto& fanout = peer.state.fanout_peers[topic];
    if (fanout.peers.empty()) {
      std::vector<std::string> eligible;
      for (const auto& [n, _] : peer.neighbors) {
        const PeerInternal& other = require_peer(n);
        if (!other.state.subscribed_topics.count(topic)) continue;
        if (other.state.score < params_.score_threshold) continue;
        eligible.push_back(n);
      }
      for (const std::string& n : pick_random(std::move(eligible),
                                              params_.fanout_size, beacon_hash,
                                              peer_id, topic, "fanout")) {
        fanout.peers.insert(n);
      }
    }
    fanout.last_used = now_;
    for (const std::string& n : fanout.peers) {
      if (!in_good_standing(n)) continue;
      send(peer, n, msg.msg_id);
    }
  }
  return msg;
}

void MeshNetwork::send(PeerInternal& from, const std::string& to,
                       const Hash32& msg_id) {
  if (!from.sent.emplace(to, msg_id).second) {
    return;
  }
  uint64_t delay = from.neighbors.at(to);
  in_flight_[now_ + delay].push_back(Flight{from.state.id, to, msg_id});
  ++sends_this_tick_;
}

void MeshNetwork::accept_message(PeerInternal& peer, const GossipMessage& msg) {
  peer.seen.insert(msg.msg_id);
  peer.held.push_back(msg.msg_id);
}

void MeshNetwork::deliver(const Flight& flight) {
  PeerInternal& to = require_peer(flight.to);
  if (to.state.score < params_.score_threshold) {
    return;
  }
  if (to.seen.count(flight.msg_id)) {
    return;
  }
  const GossipMessage& msg = messages_.at(flight.msg_id);
  accept_message(to, msg);
  // Never echo a message back to the peer it came from.
  to.sent.emplace(flight.from, flight.msg_id);
  trace_.push_back(
      DeliveryRecord{now_, flight.msg_id, flight.from, flight.to, msg.topic});
  require_peer(flight.from).state.score += 1.0;

  auto mit = to.state.mesh_peers.find(msg.topic);
  if (mit != to.state.mesh_peers.end()) {
    for (const std::string& n : mit->second) {
      if (n == flight.from) continue;
      if (!in_good_standing(n)) continue;
      send(to, n, flight.msg_id);
    }
  }
}

void MeshNetwork::step(const Hash32& beacon_hash) {
  sends_this_tick_ = 0;
  if (params_.heartbeat_period > 0 && now_ % params_.heartbeat_period == 0) {
    for (auto& [id, _] : peers_) {
      heartbeat(id, beacon_hash);
    }
  }
  auto it = in_flight_.find(now_);
  if (it != in_flight_.end()) {
    // Deliveries may enqueue same-tick forwards only when an edge has zero
    // delay; re-read the bucket each round so those drain too.
    std::vector<Flight> batch = std::move(it->second);
    in_flight_.erase(it);
    while (!batch.empty()) {
      for (const Flight& f : batch) {
        deliver(f);
      }
      batch.clear();
      auto again = in_flight_.find(now_);
      if (again != in_flight_.end()) {
        batch = std::move(again->second);
        in_flight_.erase(again);
      }
    }
  }
  ++now_;
}

void MeshNetwork::run_until_quiet(
    const std::function<Hash32(uint64_t)>& beacon_at, uint64_t max_ticks) {
  uint64_t deadline = now_ + max_ticks;
  while (now_ < deadline) {
    step(beacon_at(now_));
    if (in_flight_.empty() && sends_this_tick_ == 0 &&
        (now_ - 1) % params_.heartbeat_period == 0) {
      return;
    }
  }
  throw std::runtime_error("mesh did not settle within the tick budget");
}

const PeerState& MeshNetwork::peer(const std::string& id) const {
  return require_peer(id).state;
}

std::vector<std::string> MeshNetwork::peer_ids() const {
  std::vector<std::string> ids;
  ids.reserve(peers_.size());
  for (const auto& [id, _] : peers_) ids.push_back(id);
  return ids;
}

bool MeshNetwork::has_seen(const std::string& peer,
                           const Hash32& msg_id) const {
  return require_peer(peer).seen.count(msg_id) > 0;
}

const std::vector<Hash32>& MeshNetwork::held_messages(
    const std::string& peer) const {
  return require_peer(peer).held;
}

const GossipMessage& MeshNetwork::message(const Hash32& msg_id) const {
  auto it = messages_.find(msg_id);
  if (it == messages_.end()) {
    throw std::out_of_range("unknown message id");
  }
  return it->second;
}

MeshNetwork load_topology(const std::string& json_text, MeshParams params) {
  json j = json::parse(json_text);
  MeshNetwork net(params);
  for (const auto& p : j.at("peers")) {
    double score = p.contains("score") ? p.at("score").get<double>() : 0.0;
    net.add_peer(p.at("id").get<std::string>(), score);
  }
  for (const auto& e : j.at("edges")) {
    uint64_t delay = e.contains("delay") ? e.at("delay").get<uint64_t>() : 1;
    net.connect(e.at("a").get<std::string>(), e.at("b").get<std::string>(),
                delay);
  }
  return net;
}

std::string delivery_trace_csv(const std::vector<DeliveryRecord>& records) {
  std::ostringstream out;
  out << "tick,msg_id,from,to,topic\n";
  for (const DeliveryRecord& r : records) {
    out << r.tick << ',' << to_hex(r.msg_id) << ',' << r.from << ',' << r.to
        << ',' << r.topic << '\n';
  }
  return out.str();
}

}  // namespace faasim::events
