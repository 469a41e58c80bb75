/**
 * @file cnc_sim.hpp
 * @brief The command-and-control coordinator.
 *
 * The coordinator knows nothing about the network: it reacts to connection
 * events and frames and answers with frames addressed to connections. The
 * simulation and the live server both drive it.
 */
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avtlab/mapreduce.hpp"
#include "avtlab/payload.hpp"
#include "avtlab/wire.hpp"

namespace avtlab::cnc {

using ConnId = std::uint64_t;

struct Downlink {
    ConnId conn = 0;
    wire::Message message;
};
using Frames = std::vector<Downlink>;

struct DdosPlan {
    std::string target;
    std::uint64_t rate = 1;
    std::uint64_t duration = 1;
    std::uint64_t start_tick = 0;
    std::uint64_t min_clients = 0;  // 0: all n_clients
};

struct CncConfig {
    std::vector<payload::Payload> payloads;  // delivered in this order
    std::uint64_t obfuscation_seed = 0;
    std::uint64_t latency_ticks = 1;
    std::uint32_t n_clients = 1;
    std::optional<MapReduceJob> job;
    std::optional<DdosPlan> ddos;
};

struct Delivery {
    std::string client_id;
    std::string payload_id;
    std::uint64_t seed = 0;
    std::string signature;  // hex SHA-256 of the blob
    std::string code;
    std::uint64_t tick = 0;
};

struct StorageSnapshot {
    StringMap cookies;
    StringMap web_storage;
    bool operator==(const StorageSnapshot&) const = default;
};

struct ExfilEntry {
    std::vector<KeystrokeEvent> keystrokes;
    std::vector<StorageSnapshot> storage;
};

struct Task {
    std::uint64_t task_id = 0;
    std::string chunk;
    std::string client;          // current assignee
    std::uint64_t assigned_tick = 0;
    std::uint64_t attempts = 1;
};

struct MapReduceState {
    bool started = false;
    std::optional<std::uint64_t> started_tick;
    std::optional<std::uint64_t> completed_tick;
    std::uint64_t n_tasks = 0;
    std::map<std::uint64_t, Task> pending;
    std::map<std::uint64_t, wire::MapResult> results;
    std::uint64_t reassignments = 0;
    std::optional<CountMap> result;
    std::size_t rr_cursor = 0;
};

class Coordinator {
public:
    explicit Coordinator(CncConfig cfg);

    void on_connect(ConnId conn, std::uint64_t tick);
    /// Undecodable frames are logged and ignored.
    Frames on_frame(ConnId conn, std::string_view frame, std::uint64_t tick);
    void on_disconnect(ConnId conn, std::uint64_t tick);
    /// Task timeouts, job start, DDoS start and job completion.
    Frames on_tick(std::uint64_t tick);

    Frames activate(std::string_view token, std::uint64_t tick);
    Frames terminate_all(std::uint64_t tick);

    /// Clients with at least one open registered connection, in the order
    /// they first registered.
    std::vector<std::string> connected_clients() const;
    /// Connection used to reach a client (its oldest open one).
    std::optional<ConnId> route(std::string_view client) const;

    const CncConfig& config() const { return cfg_; }
    const std::vector<nlohmann::json>& log() const { return log_; }
    const std::map<std::string, ExfilEntry>& exfil_store() const { return exfil_; }
    const std::vector<Delivery>& deliveries() const { return deliveries_; }
    const MapReduceState& mapreduce() const { return mr_; }
    MapReduceState& mapreduce() { return mr_; }
    bool ddos_issued() const { return ddos_issued_; }
    /// True when no scheduled work (job, DDoS) remains outstanding.
    bool idle() const;

    void note(std::uint64_t tick, std::string event, nlohmann::json fields = nlohmann::json::object());

private:
    Frames deliver(ConnId conn, const std::string& client, std::uint64_t tick);
    void on_result(const wire::MapResult& r, std::uint64_t tick);

    CncConfig cfg_;
    std::map<ConnId, std::optional<std::string>> conns_;  // open connections
    std::vector<std::string> register_order_;
    std::set<std::string> delivered_to_;
    std::vector<nlohmann::json> log_;
    std::map<std::string, ExfilEntry> exfil_;
    std::vector<Delivery> deliveries_;
    MapReduceState mr_;
    bool ddos_issued_ = false;
};

/// Splits the job and assigns chunks round-robin over `clients`, task ids
/// from 0. Throws NoClients.
Frames assign_chunks(Coordinator& cnc, const MapReduceJob& job, const std::vector<std::string>& clients,
                     std::uint64_t tick);

/// Key-wise sum over all results. Throws Incomplete while tasks are pending.
CountMap reduce_results(const Coordinator& cnc, FnId fn);

/// One DdosCommand per connected client. Throws NoClients.
Frames orchestrate_ddos(Coordinator& cnc, std::string_view target, std::uint64_t rate, std::uint64_t duration,
                        std::uint64_t tick);

/// Per-delivery obfuscation seed.
std::uint64_t delivery_seed(std::uint64_t obfuscation_seed, std::string_view client, std::size_t index);

}  // namespace avtlab::cnc
