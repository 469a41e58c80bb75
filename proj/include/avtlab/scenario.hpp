/**
 * @file scenario.hpp
 * @brief Scenario configuration: who visits what, when, and what the C&C does.
 *
 * The JSON grammar is documented in docs/scenarios.md.
 */
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "avtlab/client_sim.hpp"
#include "avtlab/cnc_sim.hpp"
#include "avtlab/payload.hpp"

namespace avtlab::scenario {

enum class Mode { MaliciousServer, CompromisedApp };
enum class Label { Malicious, Benign };

std::string_view to_string(Mode m) noexcept;
std::string_view to_string(Label l) noexcept;

/// Opens the scenario's page in the client's browser.
struct Visit {};
using ScriptedEvent = std::variant<Visit, client::UserEvent>;

struct TimedEvent {
    std::uint64_t tick = 0;
    std::uint32_t client = 0;
    ScriptedEvent event;
};

struct ActivateAction {
    std::string token;
};
struct TerminateAction {};
using CncAction = std::variant<ActivateAction, TerminateAction>;

struct TimedAction {
    std::uint64_t tick = 0;
    CncAction action;
};

struct NetworkConfig {
    std::uint64_t latency_ticks = 1;
    double drop_probability = 0.0;  // uplink data frames and flood requests
};

struct Urls {
    std::string app_origin = "https://chat.example:443";
    std::string cnc_url = std::string(payload::kDefaultCncUrl);
};

struct Seeds {
    std::uint64_t obfuscation = 1;
    std::uint64_t rng = 1;
};

struct ScenarioConfig {
    std::string name = "unnamed";
    Label label = Label::Malicious;
    Mode mode = Mode::MaliciousServer;
    std::vector<std::string> payload_names;
    std::vector<payload::Payload> inline_payloads;
    std::map<std::string, TriggerSpec> trigger_overrides;
    Seeds seeds;
    std::uint32_t n_clients = 1;
    Urls urls;
    std::vector<client::VictimData> victim_data;  // indexed by client
    std::vector<TimedEvent> user_event_script;
    std::vector<TimedAction> cnc_script;
    std::optional<cnc::MapReduceJob> mapreduce;
    std::optional<cnc::DdosPlan> ddos;
    NetworkConfig network;
    std::vector<client::StaticScript> static_scripts;
    client::ClientPolicy client_policy;
    bool control_plant = false;  // write delivered code to disk (detector control)
    std::uint64_t max_ticks = 100000;
};

nlohmann::json to_json(const ScenarioConfig& c);
/// Throws Error(ConfigInvalid) on any grammar or range violation.
ScenarioConfig from_json(const nlohmann::json& j);
/// Throws Error(ConfigInvalid) if the file is missing or malformed.
ScenarioConfig load_scenario(const std::string& path);

/// Range and reference checks; throws Error(ConfigInvalid).
void validate(const ScenarioConfig& c);

/// Payloads in delivery order with trigger overrides applied.
std::vector<payload::Payload> resolved_payloads(const ScenarioConfig& c);

/// Coordinator settings derived from the scenario.
cnc::CncConfig cnc_config(const ScenarioConfig& c);

/// Whether the victim page carries the socket-opening delivery stub.
bool has_delivery_stub(const ScenarioConfig& c);

/// Origin of the page a Visit opens: the malicious site itself, or the
/// compromised application.
client::Origin visit_origin(const ScenarioConfig& c);

/// Static scripts of the visited page, including the stub when present.
std::vector<client::StaticScript> page_scripts(const ScenarioConfig& c);

/// Replaces both seeds with children of `root`.
void override_seeds(ScenarioConfig& c, std::uint64_t root);

std::string client_id(std::uint32_t index);

nlohmann::json scripted_event_to_json(const ScriptedEvent& e);
ScriptedEvent scripted_event_from_json(const nlohmann::json& j);

}  // namespace avtlab::scenario
