/**
 * @file simulation.hpp
 * @brief Discrete-event driver tying clients, network and C&C together.
 *
 * One tick proceeds in a fixed order: client tick-boundary work, network
 * arrivals due this tick (in scheduling order), scripted user events,
 * scripted C&C actions, then the coordinator's own tick. Every message
 * takes `latency_ticks` to cross the network. Uplink data frames
 * (exfiltration, map results) and flood requests are dropped with
 * `drop_probability`; connection setup, registration and downlink frames
 * are reliable.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "avtlab/client_sim.hpp"
#include "avtlab/cnc_sim.hpp"
#include "avtlab/event_log.hpp"
#include "avtlab/rng.hpp"
#include "avtlab/scenario.hpp"

namespace avtlab::sim {

class SimClock {
public:
    using Action = std::function<void()>;

    void schedule(std::uint64_t tick, Action action);
    /// Runs every event due at or before `tick` in (tick, seq) order,
    /// including ones scheduled while running.
    void run_until(std::uint64_t tick);
    bool empty() const { return queue_.empty(); }
    std::optional<std::uint64_t> next_tick() const;

private:
    struct Entry {
        std::uint64_t tick;
        std::uint64_t seq;
        Action action;
        bool operator>(const Entry& o) const { return tick != o.tick ? tick > o.tick : seq > o.seq; }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
    std::uint64_t seq_ = 0;
};

struct StaticAsset {
    std::string path;
    std::string bytes;
};

struct ClientReport {
    std::string client_id;
    std::vector<LogRecord> event_log;
    std::vector<client::FileWrite> filesystem_log;
    nlohmann::json final_state;
};

struct RunReport {
    std::string name;
    std::string label;
    nlohmann::json config;
    nlohmann::json seeds;
    std::uint64_t ticks = 0;
    std::vector<ClientReport> clients;
    nlohmann::json cnc;
    std::map<std::string, std::uint64_t> target_observables;
    nlohmann::json network;
    std::vector<StaticAsset> static_assets;
    nlohmann::json verdicts;  // null unless detection was requested

    nlohmann::json to_json() const;
    /// Throws Error(ConfigInvalid) on a malformed report.
    static RunReport from_json(const nlohmann::json& j);
    /// Canonical serialization; identical runs give identical bytes.
    std::string dump() const;
    /// Every client's event log, concatenated in client order.
    std::vector<LogRecord> all_events() const;
};

RunReport load_report(const std::string& path);

nlohmann::json client_summary(const client::BrowserState& s);
/// Exfil store, deliveries, MapReduce progress and the C&C log.
nlohmann::json cnc_summary(const cnc::Coordinator& cnc);

class Simulation {
public:
    /// Throws Error(ConfigInvalid).
    explicit Simulation(scenario::ScenarioConfig cfg);
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    /// Processes the next tick.
    void step();
    void run();
    bool finished() const { return finished_; }
    /// The last processed tick.
    std::uint64_t tick() const { return now_; }

    const scenario::ScenarioConfig& config() const { return cfg_; }
    const std::vector<client::BrowserState>& clients() const { return clients_; }
    const cnc::Coordinator& cnc() const { return cnc_; }
    const std::map<std::string, std::uint64_t>& target_observables() const { return targets_; }

    RunReport report() const;

private:
    struct Link {
        std::uint32_t client;
        client::SocketId socket;
    };

    void route(std::uint32_t client, client::Outbox& out);
    void downlink(const cnc::Frames& frames);
    void apply_event(const scenario::TimedEvent& e);
    bool quiescent() const;

    scenario::ScenarioConfig cfg_;
    client::Origin cnc_origin_;
    client::Origin page_origin_;
    std::vector<client::StaticScript> page_scripts_;
    std::vector<client::BrowserState> clients_;
    cnc::Coordinator cnc_;
    SimClock clock_;
    Rng net_rng_;
    std::map<cnc::ConnId, Link> links_;
    std::map<std::string, std::uint64_t> targets_;
    std::vector<scenario::TimedEvent> events_;  // sorted by tick, stable
    std::vector<scenario::TimedAction> actions_;
    std::size_t next_event_ = 0;
    std::size_t next_action_ = 0;
    std::uint64_t last_scripted_tick_ = 0;
    std::uint64_t now_ = 0;
    std::uint64_t next_tick_ = 0;
    bool finished_ = false;

    std::uint64_t frames_up_ = 0;
    std::uint64_t frames_down_ = 0;
    std::uint64_t frames_dropped_ = 0;
    std::uint64_t frames_undeliverable_ = 0;
    std::uint64_t requests_sent_ = 0;
    std::uint64_t requests_dropped_ = 0;
};

/// Runs the scenario to completion. Throws Error(ConfigInvalid).
RunReport run_scenario(const scenario::ScenarioConfig& cfg);

}  // namespace avtlab::sim
