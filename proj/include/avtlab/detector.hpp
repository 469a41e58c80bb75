/**
 * @file detector.hpp
 * @brief Static signature scanner and streaming behavior monitor.
 *
 * Behavior rules, evaluated per client over the event-log stream:
 *   R1  socket-injected script within `injection_window` ticks of a FrameIn
 *   R2  worker spawned from a cross-origin script
 *   R3  service worker registered by a socket-injected script
 *   R4  keystroke hook followed by an ExfilKeystrokes frame within W ticks
 *   R5  more than R requests per tick to one target on 2 consecutive ticks
 */
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avtlab/event_log.hpp"
#include "avtlab/payload.hpp"
#include "avtlab/simulation.hpp"

namespace avtlab::detect {

struct ArtifactFile {
    std::string path;
    std::string bytes;
    std::uint64_t tick = 0;  // write tick; 0 for served assets
};

/// Files at rest only: served static scripts plus filesystem writes.
struct ArtifactCorpus {
    std::vector<ArtifactFile> at_rest_files;
    static ArtifactCorpus from_report(const sim::RunReport& r);
};

enum class Engine { Static, Behavioral };
std::string_view to_string(Engine e) noexcept;

struct Flag {
    std::string rule_id;
    std::string client;  // empty for static matches
    std::uint64_t tick = 0;
    nlohmann::json evidence;
};

struct Verdict {
    bool detected = false;
    double score = 0.0;
    std::vector<Flag> flags;
    Engine engine = Engine::Behavioral;
    nlohmann::json to_json() const;
};

inline constexpr std::size_t kRules = 5;

struct DetectorConfig {
    double threshold = 1.0;
    std::array<double, kRules> weights{1.0, 1.0, 1.0, 1.0, 1.0};
    std::array<bool, kRules> enabled{true, true, true, true, true};
    std::uint64_t keystroke_window = 64;
    std::uint64_t flood_rate = 20;
    std::uint64_t injection_window = 2;
    std::vector<payload::Digest> signature_db;
    std::vector<std::string> bad_tokens = default_bad_tokens();

    /// Throws Error(ConfigInvalid) on negative weights or threshold.
    void validate() const;
    /// Page-load behavioral analysis as run by scanning services: R5 only.
    static DetectorConfig dynamic_engine();
    static std::vector<std::string> default_bad_tokens();
};

/// Adds the digests of every blob the C&C delivered in this run.
void add_delivered_digests(DetectorConfig& cfg, const sim::RunReport& r);
/// Parses 64 hex characters. Throws Error(ConfigInvalid).
payload::Digest digest_from_hex(std::string_view hex);

Verdict static_scan(const ArtifactCorpus& corpus, const DetectorConfig& cfg);

/// Single-pass monitor with bounded per-client state. Records of one client
/// must arrive in strictly increasing (tick, seq) order; clients may
/// interleave freely.
class BehaviorMonitor {
public:
    explicit BehaviorMonitor(DetectorConfig cfg);

    /// Throws Error(MalformedStream) on unknown kinds, missing rule fields
    /// or out-of-order records.
    void observe(const LogRecord& r);
    /// NDJSON bytes in chunks of any size.
    void feed(std::string_view chunk);
    void finish();

    Verdict verdict() const;

private:
    struct ClientState {
        std::optional<std::pair<std::uint64_t, std::uint64_t>> last;  // (tick, seq)
        std::optional<std::uint64_t> last_frame_in;
        std::optional<std::uint64_t> hook_tick;
        std::vector<std::string> injected_ids;  // most recent socket-injected script ids
        std::uint64_t flood_tick = 0;
        std::map<std::string, std::uint64_t> flood_counts;   // this tick
        std::set<std::string> heavy_prev;                   // over R at flood_tick - 1
        std::array<bool, kRules> fired{};
    };

    void fire(std::size_t rule, const LogRecord& r, nlohmann::json evidence);

    DetectorConfig cfg_;
    std::map<std::string, ClientState> clients_;
    std::vector<Flag> flags_;
    std::array<bool, kRules> any_fired_{};
    NdjsonReader reader_;
};

Verdict behavior_monitor(const std::vector<LogRecord>& stream, const DetectorConfig& cfg);

struct LabeledVerdict {
    std::string run_id;
    bool malicious = false;
    Verdict verdict;
};

struct Metrics {
    std::optional<double> tpr;  // n/a without malicious runs
    std::optional<double> fpr;  // n/a without benign runs
    std::uint64_t malicious = 0;
    std::uint64_t benign = 0;
    std::uint64_t true_positives = 0;
    std::uint64_t false_positives = 0;
    std::map<std::string, std::uint64_t> per_rule_counts;  // runs in which each rule fired
    nlohmann::json to_json() const;
};

/// Throws Error(EmptyCorpus).
Metrics evaluate(const std::vector<LabeledVerdict>& runs);

/// Labels come from the reports; the behavioral engine reads their event
/// logs, the static engine their at-rest artifacts with every delivered
/// digest in the signature DB. Throws EmptyCorpus or ConfigInvalid (label).
Metrics evaluate(const std::vector<sim::RunReport>& runs, const DetectorConfig& cfg, Engine engine);

/// Verdict of one engine on one report.
Verdict detect(const sim::RunReport& r, const DetectorConfig& cfg, Engine engine);

}  // namespace avtlab::detect
