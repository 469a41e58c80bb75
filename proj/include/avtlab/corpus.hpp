/**
 * @file corpus.hpp
 * @brief Labeled scenario corpus: generation, storage and evaluation.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "avtlab/detector.hpp"
#include "avtlab/scenario.hpp"

namespace avtlab::corpus {

/// Malicious templates cycle through trigger-gated keylogging (C&C
/// activation, chat token, timer), the compromised-app botnet job, the
/// cross-origin blob worker, the flooding payload and C&C-ordered DDoS.
/// Benign templates cover chat traffic, same-origin workers, an
/// offline-cache service worker, navigation churn and API polling.
scenario::ScenarioConfig malicious_scenario(std::uint64_t seed, std::size_t index);
scenario::ScenarioConfig benign_scenario(std::uint64_t seed, std::size_t index);

std::vector<scenario::ScenarioConfig> generate(std::size_t n_benign, std::size_t n_malicious, std::uint64_t seed);

/// Writes one JSON file per scenario plus manifest.json.
void write_corpus(const std::string& dir, const std::vector<scenario::ScenarioConfig>& scenarios, std::uint64_t seed);
/// Throws ConfigInvalid if the manifest or a scenario is unreadable.
std::vector<scenario::ScenarioConfig> load_corpus(const std::string& dir);

/// Every delivered payload waits for an event or a timer, and the C&C
/// orders no DDoS.
bool is_trigger_gated(const scenario::ScenarioConfig& c);

/// Ticks a scanning service watches a page after load.
inline constexpr std::uint64_t kCrawlerWindow = 64;

/// The run a page-load scanner observes: one fresh browser visits once and
/// is watched for kCrawlerWindow ticks. No user activity, no scripted C&C
/// actions.
scenario::ScenarioConfig crawler_replay(const scenario::ScenarioConfig& c);

struct CorpusEvaluation {
    detect::Metrics behavioral;
    detect::Metrics static_engine;
    detect::Metrics dynamic_engine;
    detect::Metrics dynamic_trigger_gated;  // malicious trigger-gated runs only
    nlohmann::json runs = nlohmann::json::array();
    nlohmann::json to_json() const;
};

/// Runs every scenario and scores all three engines. Throws EmptyCorpus.
CorpusEvaluation evaluate_corpus(const std::vector<scenario::ScenarioConfig>& scenarios,
                                 const detect::DetectorConfig& cfg = {});

}  // namespace avtlab::corpus
