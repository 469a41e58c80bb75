#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "avtlab/error.hpp"
#include "avtlab/simulation.hpp"
#include "oracles.hpp"

using namespace avtlab;
using namespace avtlab::sim;
using namespace avtlab::scenario;

namespace {

const std::string kDir = std::string(AVTLAB_SOURCE_DIR) + "/scenarios/";

const LogRecord* first(const ClientReport& c, std::string_view kind) {
    for (const auto& r : c.event_log)
        if (r.kind == kind) return &r;
    return nullptr;
}

std::size_t count(const ClientReport& c, std::string_view kind) {
    return std::count_if(c.event_log.begin(), c.event_log.end(), [&](const LogRecord& r) { return r.kind == kind; });
}

ScenarioConfig ddos_config(std::uint32_t n, double drop, std::uint64_t seed) {
    ScenarioConfig c;
    c.name = "ddos-test";
    c.mode = Mode::CompromisedApp;
    c.n_clients = n;
    c.seeds = {seed, seed};
    for (std::uint32_t i = 0; i < n; ++i) c.user_event_script.push_back({1, i, Visit{}});
    c.ddos = cnc::DdosPlan{"http://target.example:80/", 10, 3, 4, 0};
    c.network.drop_probability = drop;
    return c;
}

}  // namespace

TEST_CASE("clock runs events in (tick, seq) order, including ones scheduled while running") {
    Rng r(40);
    for (int trial = 0; trial < 50; ++trial) {
        SimClock clock;
        std::vector<std::pair<std::uint64_t, int>> ran, expected;
        int next_id = 0;
        for (int i = 0; i < 100; ++i) {
            const auto t = r.below(20);
            const int id = next_id++;
            expected.emplace_back(t, id);
            clock.schedule(t, [&, t, id] {
                ran.emplace_back(t, id);
                if (id % 7 == 0) {
                    const int child = 1000 + id;
                    clock.schedule(t, [&, t, child] { ran.emplace_back(t, child); });
                }
            });
        }
        clock.run_until(25);
        CHECK(clock.empty());
        // Each tick's batch runs in insertion order; children run after all
        // siblings already queued for the same tick.
        for (std::size_t i = 1; i < ran.size(); ++i) CHECK(ran[i - 1].first <= ran[i].first);
        std::vector<std::pair<std::uint64_t, int>> parents;
        for (auto& e : ran)
            if (e.second < 1000) parents.push_back(e);
        std::stable_sort(expected.begin(), expected.end(), [](auto& a, auto& b) { return a.first < b.first; });
        CHECK(parents == expected);
    }
}

TEST_CASE("clock leaves future events queued") {
    SimClock clock;
    int hits = 0;
    clock.schedule(5, [&] { ++hits; });
    clock.run_until(4);
    CHECK(hits == 0);
    CHECK(clock.next_tick() == 5u);
    clock.run_until(5);
    CHECK(hits == 1);
}

TEST_CASE("fig1 replay: injection only after activation, no files") {
    const auto cfg = load_scenario(kDir + "fig1_malicious_server.json");
    const auto rep = run_scenario(cfg);
    REQUIRE(rep.clients.size() == 1);
    const auto& c = rep.clients[0];
    CHECK(c.filesystem_log.empty());
    const auto* pending = first(c, "PayloadPending");
    const auto* fired = first(c, "TriggerFired");
    REQUIRE(pending);
    REQUIRE(fired);
    CHECK(fired->fields["cause"] == "Activate");
    CHECK(fired->tick >= 10);
    for (const auto& r : c.event_log)
        if (r.kind == "ScriptInjected" && r.fields["source"] == "SocketInjected") CHECK(r.tick >= fired->tick);
    // Exactly the keys typed after the hook reached the C&C, once each.
    std::string keys;
    for (const auto& k : rep.cnc["exfil_store"]["client-0"]["keystrokes"]) keys += k["key"].get<std::string>();
    CHECK(keys == "hi!");
}

TEST_CASE("network latency: delivery takes one round trip") {
    for (std::uint64_t lat : {1, 2, 5}) {
        auto cfg = load_scenario(kDir + "fig1_malicious_server.json");
        cfg.network.latency_ticks = lat;
        cfg.cnc_script.clear();
        const auto rep = run_scenario(cfg);
        const auto& c = rep.clients[0];
        const LogRecord* opened = nullptr;
        for (const auto& r : c.event_log)
            if (r.kind == "SocketOpened") {
                opened = &r;
                break;
            }
        REQUIRE(opened);
        CHECK(first(c, "PayloadPending")->tick == opened->tick + 2 * lat);
    }
}

TEST_CASE("zero clients is a config error") {
    ScenarioConfig c;
    c.n_clients = 0;
    CHECK_THROWS_AS(run_scenario(c), Error);
}

TEST_CASE("identical configs give byte-identical reports") {
    for (const auto& entry : std::filesystem::directory_iterator(kDir)) {
        const auto cfg = load_scenario(entry.path().string());
        CHECK(run_scenario(cfg).dump() == run_scenario(cfg).dump());
    }
}

TEST_CASE("report JSON round-trip") {
    const auto rep = run_scenario(load_scenario(kDir + "fig2_compromised_app.json"));
    CHECK(RunReport::from_json(rep.to_json()).dump() == rep.dump());
    CHECK_THROWS_AS(RunReport::from_json(nlohmann::json{{"clients", 3}}), Error);
}

TEST_CASE("obfuscation seed changes blob bytes, not behavior") {
    auto a = load_scenario(kDir + "fig2_compromised_app.json");
    auto b = a;
    b.seeds.obfuscation = a.seeds.obfuscation + 1;
    const auto ra = run_scenario(a);
    const auto rb = run_scenario(b);
    REQUIRE(ra.cnc["deliveries"].size() == rb.cnc["deliveries"].size());
    for (std::size_t i = 0; i < ra.cnc["deliveries"].size(); ++i)
        CHECK(ra.cnc["deliveries"][i]["code"] != rb.cnc["deliveries"][i]["code"]);
    REQUIRE(ra.clients.size() == rb.clients.size());
    for (std::size_t i = 0; i < ra.clients.size(); ++i) CHECK(ra.clients[i].event_log == rb.clients[i].event_log);
    CHECK(ra.cnc["mapreduce"]["result"] == rb.cnc["mapreduce"]["result"]);
}

TEST_CASE("fig2: service workers outlive navigation and finish the job") {
    const auto rep = run_scenario(load_scenario(kDir + "fig2_compromised_app.json"));
    for (const auto& c : rep.clients) {
        REQUIRE(c.filesystem_log.size() == 1);
        CHECK(c.filesystem_log[0].cause == client::kCauseServiceWorker);
    }
    const auto& cfg = load_scenario(kDir + "fig2_compromised_app.json");
    CHECK(rep.cnc["mapreduce"]["result"] == nlohmann::json(oracle::word_count(cfg.mapreduce->data)));
}

TEST_CASE("ddos: 4 clients x rate 10 x duration 3") {
    const auto rep = run_scenario(ddos_config(4, 0.0, 1));
    CHECK(rep.target_observables.at("http://target.example:80/") == 120);
}

TEST_CASE("ddos under 50% request loss stays in the binomial 99% interval") {
    // n = 120, p = 0.5: mean 60, sd sqrt(30); 2.576 sd either side.
    const double half = 2.576 * std::sqrt(30.0);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto rep = run_scenario(ddos_config(4, 0.5, seed));
        const auto it = rep.target_observables.find("http://target.example:80/");
        const double got = it == rep.target_observables.end() ? 0.0 : static_cast<double>(it->second);
        CHECK(std::abs(got - 60.0) <= half);
        CHECK(rep.network["requests_sent"] == 120);
    }
}

TEST_CASE("mapreduce under drops equals the oracle") {
    Rng r(50);
    for (int trial = 0; trial < 20; ++trial) {
        ScenarioConfig c;
        c.name = "mr";
        c.mode = Mode::CompromisedApp;
        c.payload_names = {"map_worker"};
        c.n_clients = static_cast<std::uint32_t>(r.range(1, 6));
        c.seeds = {r.next(), r.next()};
        for (std::uint32_t i = 0; i < c.n_clients; ++i) c.user_event_script.push_back({r.below(4), i, Visit{}});
        const FnId fn = r.bernoulli(0.5) ? FnId::WordCount : FnId::SumOfSquares;
        c.mapreduce = cnc::MapReduceJob{fn, oracle::job_text(r, r.below(3000)), r.range(8, 200), 5, 0};
        c.network = {r.range(1, 3), r.unit() * 0.3};
        const auto rep = run_scenario(c);
        REQUIRE(!rep.cnc["mapreduce"]["completed_tick"].is_null());
        CHECK(rep.cnc["mapreduce"]["result"] == nlohmann::json(oracle::run(fn, c.mapreduce->data)));
    }
}

TEST_CASE("fileless without service workers") {
    for (const char* name : {"fig1_malicious_server.json", "ddos.json", "blob_worker.json", "benign_chat.json"}) {
        const auto rep = run_scenario(load_scenario(kDir + name));
        for (const auto& c : rep.clients) {
            CHECK(c.filesystem_log.empty());
            CHECK(count(c, "FileWrite") == 0);
        }
    }
}

TEST_CASE("control plant writes the delivered blob") {
    const auto rep = run_scenario(load_scenario(kDir + "control_planted.json"));
    REQUIRE(rep.clients[0].filesystem_log.size() == 1);
    CHECK(rep.clients[0].filesystem_log[0].cause == client::kCauseControlPlant);
    CHECK(rep.clients[0].filesystem_log[0].content == rep.cnc["deliveries"][0]["code"]);
}

TEST_CASE("stepping matches run") {
    const auto cfg = load_scenario(kDir + "blob_worker.json");
    Simulation sim(cfg);
    std::uint64_t last = 0;
    while (!sim.finished()) {
        sim.step();
        CHECK(sim.tick() >= last);
        last = sim.tick();
    }
    CHECK(sim.report().dump() == run_scenario(cfg).dump());
}
