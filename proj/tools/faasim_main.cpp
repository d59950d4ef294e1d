#include <glob.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "faasim/events/mesh.hpp"
#include "faasim/sim/sim.hpp"

namespace fs = std::filesystem;
using namespace faasim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open " + path);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << content;
}

int cmd_run(const std::string& scenario_path, const std::string& out_dir,
            const std::vector<std::string>& overrides) {
  std::string text;
  sim::ScenarioConfig config;
  try {
    text = read_file(scenario_path);
    for (const std::string& o : overrides) {
      sim::apply_override(text, o);
    }
    config = sim::scenario_from_json(text);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  sim::BatchResult batch = sim::run_batch(config);

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "scenario.json", text);
  std::vector<sim::RunMetrics> metrics;
  for (const sim::RunResult& r : batch.runs) {
    metrics.push_back(r.metrics);
    std::string suffix = "_run" + std::to_string(r.metrics.run_index);
    write_file(fs::path(out_dir) / ("trace" + suffix + ".csv"),
               sim::decisions_csv(r.decisions));
    write_file(fs::path(out_dir) / ("beacons" + suffix + ".json"),
               sim::beacons_json(r.metrics.run_index, r.beacons));
  }
  write_file(fs::path(out_dir) / "metrics.csv",
             sim::metrics_csv(config, metrics));

  std::ostringstream digests;
  digests << "run_index,ledger_digest\n";
  for (const sim::RunResult& r : batch.runs) {
    digests << r.metrics.run_index << ','
            << to_hex(r.metrics.ledger_digest) << '\n';
  }
  write_file(fs::path(out_dir) / "digests.csv", digests.str());

  std::ostringstream payments;
  payments << "run_index,gateway,handled,payment\n";
  for (const sim::RunResult& r : batch.runs) {
    for (const auto& [gid, amount] : r.metrics.payments) {
      auto it = r.metrics.handled_by_gateway.find(gid);
      uint64_t handled = it == r.metrics.handled_by_gateway.end() ? 0
                                                                  : it->second;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", amount);
      payments << r.metrics.run_index << ',' << gid << ',' << handled << ','
               << buf << '\n';
    }
  }
  write_file(fs::path(out_dir) / "payments.csv", payments.str());

  std::vector<sim::MetricsRow> rows =
      sim::metrics_from_csv(sim::metrics_csv(config, metrics));
  std::cout << sim::summary_table_text(sim::summarize(rows));
  return kExitOk;
}

int cmd_verify(const std::string& trace_path, const std::string& beacons_path,
               const std::string& scenario_path) {
  std::vector<sched::RoutingDecision> trace;
  sim::BeaconFile beacons;
  sim::ScenarioConfig config;
  try {
    trace = sim::decisions_from_csv(read_file(trace_path));
    beacons = sim::beacons_from_json(read_file(beacons_path));
    config = sim::scenario_from_json(read_file(scenario_path));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  sim::VerifyResult result = sim::replay_verify(trace, beacons, config);
  if (result.ok) {
    std::cout << "verified: " << trace.size() << " decisions match\n";
    return kExitOk;
  }
  std::cout << "verification failed: " << result.reason;
  if (result.mismatch_call_id) {
    std::cout << " (call_id " << *result.mismatch_call_id << ")";
  }
  std::cout << "\n";
  return kExitVerifyFailed;
}

int cmd_report(const std::string& pattern, bool as_csv) {
  glob_t matches{};
  int rc = ::glob(pattern.c_str(), 0, nullptr, &matches);
  if (rc != 0 || matches.gl_pathc == 0) {
    globfree(&matches);
    std::cerr << "error: no metrics files match " << pattern << "\n";
    return kExitUsage;
  }
  std::vector<sim::MetricsRow> rows;
  try {
    for (size_t i = 0; i < matches.gl_pathc; ++i) {
      auto parsed = sim::metrics_from_csv(read_file(matches.gl_pathv[i]));
      rows.insert(rows.end(), parsed.begin(), parsed.end());
    }
  } catch (const std::exception& e) {
    globfree(&matches);
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  globfree(&matches);

  auto summary = sim::summarize(rows);
  std::cout << (as_csv ? sim::summary_table_csv(summary)
                       : sim::summary_table_text(summary));
  return kExitOk;
}

int cmd_gossip(const std::string& topology_path,
               const std::string& events_path, const std::string& out_path) {
  events::MeshNetwork net;
  nlohmann::json schedule;
  try {
    std::string topology_text = read_file(topology_path);
    schedule = nlohmann::json::parse(read_file(events_path));

    events::MeshParams params;
    if (schedule.contains("params")) {
      const auto& p = schedule.at("params");
      if (p.contains("d")) params.d = p.at("d").get<uint32_t>();
      if (p.contains("d_lo")) params.d_lo = p.at("d_lo").get<uint32_t>();
      if (p.contains("d_hi")) params.d_hi = p.at("d_hi").get<uint32_t>();
      if (p.contains("fanout_size")) {
        params.fanout_size = p.at("fanout_size").get<uint32_t>();
      }
      if (p.contains("score_threshold")) {
        params.score_threshold = p.at("score_threshold").get<double>();
      }
      if (p.contains("heartbeat_period")) {
        params.heartbeat_period = p.at("heartbeat_period").get<uint64_t>();
      }
    }
    net = events::load_topology(topology_text, params);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    uint64_t seed = schedule.contains("seed")
                        ? schedule.at("seed").get<uint64_t>()
                        : 0;
    Hash32 run_seed = sim::run_seed_hash(seed, 0);
    ledger::Ledger chain;
    auto beacon_at = [&](uint64_t height) {
      while (chain.chain_height() <= height) {
        ByteWriter w;
        w.raw(run_seed).u64(chain.chain_height());
        chain.append_block(crypto::sha256(w.bytes()));
      }
      return chain.beacon(height);
    };

    std::map<uint64_t, std::vector<nlohmann::json>> by_tick;
    if (schedule.contains("events")) {
      for (const auto& e : schedule.at("events")) {
        by_tick[e.at("tick").get<uint64_t>()].push_back(e);
      }
    }
    uint64_t last_tick = by_tick.empty() ? 0 : by_tick.rbegin()->first;
    for (uint64_t t = 0; t <= last_tick; ++t) {
      auto it = by_tick.find(t);
      if (it != by_tick.end()) {
        for (const auto& e : it->second) {
          std::string op = e.at("op").get<std::string>();
          if (op == "subscribe") {
            net.subscribe(e.at("peer").get<std::string>(),
                          e.at("topic").get<std::string>());
          } else if (op == "score") {
            net.update_score(e.at("reporter").get<std::string>(),
                             e.at("peer").get<std::string>(),
                             e.at("delta").get<double>());
          } else if (op == "publish") {
            std::string payload = e.at("payload").get<std::string>();
            Bytes bytes(payload.begin(), payload.end());
            net.publish(e.at("peer").get<std::string>(),
                        e.at("topic").get<std::string>(), std::move(bytes),
                        beacon_at(t));
          } else {
            throw std::invalid_argument("unknown event op: " + op);
          }
        }
      }
      net.step(beacon_at(t));
    }
    net.run_until_quiet(beacon_at);

    std::string csv = events::delivery_trace_csv(net.deliveries());
    if (out_path.empty()) {
      std::cout << csv;
    } else {
      write_file(out_path, csv);
      std::cout << "deliveries: " << net.deliveries().size() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

int cmd_demo_billing(const std::string& scenario_path,
                     const std::vector<std::string>& overrides) {
  sim::ScenarioConfig config;
  try {
    std::string text = read_file(scenario_path);
    for (const std::string& o : overrides) {
      sim::apply_override(text, o);
    }
    sim::apply_override(text, "billing.enabled=true");
    config = sim::scenario_from_json(text);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  sim::RunResult result;
  try {
    result = sim::run(config, 0);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const sim::BillingSummary& b = result.billing;
  std::cout << "calls processed:    " << result.metrics.total_calls << "\n"
            << "receipts settled:   " << b.receipts_settled << "\n"
            << "fees settled:       " << b.total_fees_settled << "\n"
            << "user deposit:       " << b.user_deposit_start << " -> "
            << b.user_deposit_end << "\n"
            << "token supply:       " << b.supply_start << " -> "
            << b.supply_end
            << (b.supply_start == b.supply_end ? " (conserved)" : " (CHANGED)")
            << "\n"
            << "gateway balances:\n";
  for (const auto& [gid, bal] : b.gateway_balances) {
    std::cout << "  gateway " << gid << ": " << bal << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic multi-cloud FaaS control-plane simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  auto* run_cmd =
      app.add_subcommand("run", "Execute a scenario batch and write artifacts");
  run_cmd->add_option("--scenario", scenario_path, "Scenario JSON file")
      ->required();
  run_cmd->add_option("--out", out_dir, "Output directory (default: out)");
  run_cmd->add_option("--override", overrides,
                      "key=value config override, repeatable");

  std::string trace_path, beacons_path, verify_scenario;
  auto* verify_cmd = app.add_subcommand(
      "verify", "Replay a decision trace against its beacon chain");
  verify_cmd->add_option("--trace", trace_path, "Decision trace CSV")
      ->required();
  verify_cmd->add_option("--beacons", beacons_path, "Beacon chain JSON")
      ->required();
  verify_cmd->add_option("--scenario", verify_scenario, "Scenario JSON file")
      ->required();

  std::string metrics_glob;
  bool report_csv = false;
  auto* report_cmd =
      app.add_subcommand("report", "Aggregate metrics files into a table");
  report_cmd->add_option("--metrics", metrics_glob, "Glob of metrics CSV files")
      ->required();
  report_cmd->add_flag("--csv", report_csv, "Emit CSV instead of a table");

  std::string topology_path, events_path, gossip_out;
  auto* gossip_cmd = app.add_subcommand(
      "gossip", "Simulate a pub/sub mesh over a topology and event schedule");
  gossip_cmd->add_option("--topology", topology_path, "Topology JSON")
      ->required();
  gossip_cmd->add_option("--events", events_path, "Event schedule JSON")
      ->required();
  gossip_cmd->add_option("--out", gossip_out,
                         "Delivery trace output path (default: stdout)");

  std::string billing_scenario;
  std::vector<std::string> billing_overrides;
  auto* billing_cmd = app.add_subcommand(
      "demo-billing",
      "End-to-end signed requests, logs, receipts and settlement");
  billing_cmd->add_option("--scenario", billing_scenario, "Scenario JSON file")
      ->required();
  billing_cmd->add_option("--override", billing_overrides,
                          "key=value config override, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (run_cmd->parsed()) {
      return cmd_run(scenario_path, out_dir, overrides);
    }
    if (verify_cmd->parsed()) {
      return cmd_verify(trace_path, beacons_path, verify_scenario);
    }
    if (report_cmd->parsed()) {
      return cmd_report(metrics_glob, report_csv);
    }
    if (gossip_cmd->parsed()) {
      return cmd_gossip(topology_path, events_path, gossip_out);
    }
    if (billing_cmd->parsed()) {
      return cmd_demo_billing(billing_scenario, billing_overrides);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
