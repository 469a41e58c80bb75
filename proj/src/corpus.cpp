#include "avtlab/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "avtlab/error.hpp"
#include "avtlab/rng.hpp"
#include "avtlab/simulation.hpp"

namespace avtlab::corpus {

namespace fs = std::filesystem;
using nlohmann::json;
using payload::Instruction;
using scenario::ScenarioConfig;
using scenario::TimedEvent;

namespace {

constexpr std::string_view kAppOrigin = "https://chat.example:443";
constexpr std::string_view kChatSocket = "wss://chat.example:443/chat";

const std::vector<std::string>& words() {
    static const std::vector<std::string> w{"alpha", "bravo", "delta", "echo",  "kilo", "lima",  "mike",
                                            "oscar", "papa",  "romeo", "sierra", "tango", "victor", "zulu"};
    return w;
}

std::string hex_token(Rng& rng, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += digits[rng.below(16)];
    return s;
}

client::VictimData victim(Rng& rng) {
    client::VictimData v;
    v.cookies["sid"] = hex_token(rng, 16);
    v.cookies["lang"] = rng.bernoulli(0.5) ? "en" : "fr";
    v.web_storage["draft"] = words()[rng.below(words().size())];
    if (rng.bernoulli(0.5)) v.web_storage["theme"] = "dark";
    return v;
}

// Common skeleton: clients, seeds, latency, victim data and page visits.
ScenarioConfig skeleton(Rng& rng, std::string name, scenario::Label label) {
    ScenarioConfig c;
    c.name = std::move(name);
    c.label = label;
    c.seeds.obfuscation = rng.next();
    c.seeds.rng = rng.next();
    c.n_clients = static_cast<std::uint32_t>(rng.range(1, 3));
    c.network.latency_ticks = rng.range(1, 3);
    c.urls.app_origin = std::string(kAppOrigin);
    for (std::uint32_t i = 0; i < c.n_clients; ++i) {
        c.victim_data.push_back(victim(rng));
        c.user_event_script.push_back({rng.range(0, 2), i, scenario::Visit{}});
    }
    return c;
}

void keystrokes(Rng& rng, ScenarioConfig& c, std::uint32_t client, std::uint64_t from, std::uint64_t count) {
    for (std::uint64_t k = 0; k < count; ++k) {
        std::string key(1, static_cast<char>('a' + rng.below(26)));
        c.user_event_script.push_back({from + k, client, client::UserEvent{client::Keystroke{key}}});
    }
}

void chatter(Rng& rng, ScenarioConfig& c, std::uint32_t client, std::uint64_t from, std::uint64_t count) {
    for (std::uint64_t k = 0; k < count; ++k) {
        std::string text = words()[rng.below(words().size())] + " " + words()[rng.below(words().size())];
        c.user_event_script.push_back({from + 3 * k, client, client::UserEvent{client::ChatMessage{text}}});
    }
}

std::string word_text(Rng& rng, std::size_t n_words) {
    std::string s;
    for (std::size_t i = 0; i < n_words; ++i) {
        if (i) s += rng.bernoulli(0.1) ? "\n" : " ";
        s += words()[rng.below(words().size())];
    }
    return s;
}

std::string number_text(Rng& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += std::to_string(rng.below(1000));
    }
    return s;
}

client::StaticScript chat_script() {
    return {"app.js", {Instruction{payload::OpenSocket{std::string(kChatSocket)}}}};
}

std::uint64_t delivered_by(const ScenarioConfig& c) { return 2 + 2 * c.network.latency_ticks + 1; }

}  // namespace

ScenarioConfig malicious_scenario(std::uint64_t seed, std::size_t index) {
    Rng rng(derive_seed(derive_seed(seed, "corpus"), 1, index));
    const std::size_t kind = index % 7;
    static const char* names[] = {"keylog-activate", "keylog-chat-token", "botnet-job",  "blob-worker",
                                  "flood-payload",   "cnc-ddos",          "keylog-timer"};
    ScenarioConfig c = skeleton(rng, "malicious-" + std::to_string(index) + "-" + names[kind], scenario::Label::Malicious);
    const std::string token = "tok-" + hex_token(rng, 6);
    const std::uint64_t ready = delivered_by(c);

    switch (kind) {
        case 0: {
            c.mode = scenario::Mode::MaliciousServer;
            c.payload_names = {"keycookielog"};
            c.trigger_overrides["keycookielog"] = OnEvent{token};
            const std::uint64_t t = ready + rng.range(4, 15);
            c.cnc_script.push_back({t, scenario::ActivateAction{token}});
            for (std::uint32_t i = 0; i < c.n_clients; ++i)
                keystrokes(rng, c, i, t + 2 * c.network.latency_ticks + 1, rng.range(5, 30));
            break;
        }
        case 1: {
            c.mode = scenario::Mode::CompromisedApp;
            c.static_scripts = {chat_script()};
            c.payload_names = {"keycookielog"};
            c.trigger_overrides["keycookielog"] = OnEvent{token};
            for (std::uint32_t i = 0; i < c.n_clients; ++i) {
                const std::uint64_t t = ready + rng.range(3, 12);
                chatter(rng, c, i, 3, 2);
                c.user_event_script.push_back({t, i, client::UserEvent{client::ChatMessage{"see " + token + " now"}}});
                keystrokes(rng, c, i, t + 1, rng.range(5, 30));
            }
            break;
        }
        case 2: {
            c.mode = scenario::Mode::CompromisedApp;
            c.static_scripts = {chat_script()};
            c.payload_names = {"keycookielog", "map_worker"};
            c.trigger_overrides["keycookielog"] = OnEvent{token};
            c.mapreduce = cnc::MapReduceJob{FnId::WordCount, word_text(rng, rng.range(40, 200)), rng.range(24, 96),
                                            ready + 2, 0};
            const std::uint64_t t = ready + rng.range(4, 10);
            c.cnc_script.push_back({t, scenario::ActivateAction{token}});
            for (std::uint32_t i = 0; i < c.n_clients; ++i)
                keystrokes(rng, c, i, t + 2 * c.network.latency_ticks + 1, rng.range(5, 20));
            break;
        }
        case 3: {
            c.mode = scenario::Mode::MaliciousServer;
            c.payload_names = {"blob_worker"};
            c.mapreduce = cnc::MapReduceJob{FnId::SumOfSquares, number_text(rng, rng.range(20, 120)), rng.range(16, 64),
                                            ready + 1, 0};
            break;
        }
        case 4: {
            c.mode = scenario::Mode::MaliciousServer;
            c.payload_names = {"ddos_bot"};
            break;
        }
        case 5: {
            c.mode = scenario::Mode::CompromisedApp;
            c.static_scripts = {chat_script()};
            c.ddos = cnc::DdosPlan{"http://victim-target.example:80/", rng.range(25, 60), rng.range(3, 8),
                                   ready + rng.range(5, 30), 0};
            for (std::uint32_t i = 0; i < c.n_clients; ++i) chatter(rng, c, i, 4, 3);
            break;
        }
        default: {
            c.mode = scenario::Mode::MaliciousServer;
            c.payload_names = {"keycookielog"};
            const std::uint64_t at = rng.range(100, 150);
            c.trigger_overrides["keycookielog"] = AtTick{at};
            for (std::uint32_t i = 0; i < c.n_clients; ++i) keystrokes(rng, c, i, at + 1, rng.range(5, 30));
            break;
        }
    }
    return c;
}

ScenarioConfig benign_scenario(std::uint64_t seed, std::size_t index) {
    Rng rng(derive_seed(derive_seed(seed, "corpus"), 0, index));
    const std::size_t kind = index % 5;
    static const char* names[] = {"chat", "same-origin-worker", "offline-cache-sw", "navigation-churn", "api-polling"};
    ScenarioConfig c = skeleton(rng, "benign-" + std::to_string(index) + "-" + names[kind], scenario::Label::Benign);
    c.mode = scenario::Mode::CompromisedApp;
    c.static_scripts = {chat_script()};
    const std::string app(kAppOrigin);

    switch (kind) {
        case 0:
            break;
        case 1:
            c.static_scripts.push_back(
                {"worker-host.js",
                 {Instruction{payload::SpawnWorkerFromBlob{app + "/js/worker.js",
                                                           {Instruction{payload::OpenSocket{"wss://chat.example:443/feed"}}}}}}});
            break;
        case 2:
            c.static_scripts.push_back({"offline.js", {Instruction{payload::RegisterServiceWorker{{}}}}});
            break;
        case 3:
            for (std::uint32_t i = 0; i < c.n_clients; ++i) {
                c.user_event_script.push_back({20, i, client::UserEvent{client::Navigate{}}});
                c.user_event_script.push_back({22, i, scenario::Visit{}});
                c.user_event_script.push_back({30, i, client::UserEvent{client::BrowserClose{}}});
                c.user_event_script.push_back({32, i, scenario::Visit{}});
                c.user_event_script.push_back({40, i, client::UserEvent{client::MachineRestart{}}});
            }
            break;
        default:
            c.static_scripts.push_back(
                {"poll.js", {Instruction{payload::HttpFlood{app + "/api/poll", rng.range(1, 10), rng.range(5, 30)}}}});
            break;
    }
    for (std::uint32_t i = 0; i < c.n_clients; ++i) {
        chatter(rng, c, i, 5, rng.range(2, 6));
        keystrokes(rng, c, i, 6, rng.range(5, 12));
    }
    return c;
}

std::vector<ScenarioConfig> generate(std::size_t n_benign, std::size_t n_malicious, std::uint64_t seed) {
    std::vector<ScenarioConfig> out;
    for (std::size_t i = 0; i < n_malicious; ++i) out.push_back(malicious_scenario(seed, i));
    for (std::size_t i = 0; i < n_benign; ++i) out.push_back(benign_scenario(seed, i));
    for (const auto& c : out) scenario::validate(c);
    return out;
}

void write_corpus(const std::string& dir, const std::vector<ScenarioConfig>& scenarios, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::Io, "cannot create '" + dir + "': " + ec.message());
    json manifest = {{"seed", seed}, {"runs", json::array()}};
    for (const auto& c : scenarios) {
        const std::string file = c.name + ".json";
        std::ofstream out(fs::path(dir) / file, std::ios::binary);
        if (!out) throw Error(Errc::Io, "cannot write '" + file + "'");
        out << scenario::to_json(c).dump(2) << "\n";
        manifest["runs"].push_back({{"file", file}, {"label", std::string(scenario::to_string(c.label))}});
    }
    std::ofstream m(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!m) throw Error(Errc::Io, "cannot write manifest.json");
    m << manifest.dump(2) << "\n";
}

std::vector<ScenarioConfig> load_corpus(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream in(mpath, std::ios::binary);
    if (!in) throw Error(Errc::ConfigInvalid, "no manifest.json in '" + dir + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    json manifest = json::parse(ss.str(), nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("runs") || !manifest["runs"].is_array())
        throw Error(Errc::ConfigInvalid, "malformed manifest.json in '" + dir + "'");
    std::vector<ScenarioConfig> out;
    for (const auto& run : manifest["runs"]) {
        if (!run.contains("file") || !run["file"].is_string())
            throw Error(Errc::ConfigInvalid, "manifest entry without file");
        out.push_back(scenario::load_scenario((fs::path(dir) / run["file"].get<std::string>()).string()));
    }
    return out;
}

bool is_trigger_gated(const ScenarioConfig& c) {
    if (c.ddos) return false;
    const auto payloads = scenario::resolved_payloads(c);
    if (payloads.empty()) return false;
    for (const auto& p : payloads)
        if (std::holds_alternative<Immediate>(p.trigger)) return false;
    return true;
}

ScenarioConfig crawler_replay(const ScenarioConfig& c) {
    ScenarioConfig r = c;
    r.name = c.name + "-crawl";
    r.n_clients = 1;
    r.victim_data.clear();
    r.user_event_script = {{0, 0, scenario::Visit{}}};
    r.cnc_script.clear();
    r.network.drop_probability = 0.0;
    r.control_plant = false;
    if (r.mapreduce) r.mapreduce->min_clients = 1;
    if (r.ddos) r.ddos->min_clients = 1;
    r.max_ticks = kCrawlerWindow;
    return r;
}

json CorpusEvaluation::to_json() const {
    return {{"behavioral", behavioral.to_json()},
            {"static", static_engine.to_json()},
            {"dynamic", dynamic_engine.to_json()},
            {"dynamic_trigger_gated", dynamic_trigger_gated.to_json()},
            {"runs", runs}};
}

CorpusEvaluation evaluate_corpus(const std::vector<ScenarioConfig>& scenarios, const detect::DetectorConfig& cfg) {
    if (scenarios.empty()) throw Error(Errc::EmptyCorpus, "corpus has no scenarios");
    std::vector<detect::LabeledVerdict> beh, stat, dyn, gated;
    CorpusEvaluation ev;
    const auto dyn_cfg = detect::DetectorConfig::dynamic_engine();
    for (const auto& c : scenarios) {
        const bool malicious = c.label == scenario::Label::Malicious;
        const auto report = sim::run_scenario(c);
        const auto crawl = sim::run_scenario(crawler_replay(c));
        auto vb = detect::detect(report, cfg, detect::Engine::Behavioral);
        auto vs = detect::detect(report, cfg, detect::Engine::Static);
        auto vd = detect::detect(crawl, dyn_cfg, detect::Engine::Behavioral);
        const bool gated_run = malicious && is_trigger_gated(c);
        auto summary = [](const detect::Verdict& v) {
            json rules = json::array();
            for (const auto& f : v.flags) rules.push_back(f.rule_id);
            return json{{"detected", v.detected}, {"score", v.score}, {"rules", rules}};
        };
        ev.runs.push_back({{"name", c.name},
                           {"label", std::string(scenario::to_string(c.label))},
                           {"trigger_gated", gated_run},
                           {"behavioral", summary(vb)},
                           {"static", summary(vs)},
                           {"dynamic", summary(vd)}});
        beh.push_back({c.name, malicious, std::move(vb)});
        stat.push_back({c.name, malicious, std::move(vs)});
        if (gated_run) gated.push_back({c.name, malicious, vd});
        dyn.push_back({c.name, malicious, std::move(vd)});
    }
    ev.behavioral = detect::evaluate(beh);
    ev.static_engine = detect::evaluate(stat);
    ev.dynamic_engine = detect::evaluate(dyn);
    if (!gated.empty()) ev.dynamic_trigger_gated = detect::evaluate(gated);
    return ev;
}

}  // namespace avtlab::corpus
