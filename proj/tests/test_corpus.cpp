#include <doctest.h>

#include <filesystem>
#include <set>

#include "avtlab/corpus.hpp"
#include "avtlab/error.hpp"
#include "avtlab/simulation.hpp"

using namespace avtlab;
using namespace avtlab::corpus;
namespace fs = std::filesystem;

namespace {

const std::string kCorpus = std::string(AVTLAB_SOURCE_DIR) + "/corpus";

std::vector<std::string> dumps(const std::vector<scenario::ScenarioConfig>& v) {
    std::vector<std::string> out;
    for (const auto& c : v) out.push_back(scenario::to_json(c).dump());
    return out;
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("avtlab-" + name + "-" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("generation is deterministic and labeled") {
    const auto a = generate(6, 9, 3);
    CHECK(dumps(a) == dumps(generate(6, 9, 3)));
    CHECK(dumps(a) != dumps(generate(6, 9, 4)));
    std::size_t mal = 0;
    std::set<std::string> names;
    for (const auto& c : a) {
        mal += c.label == scenario::Label::Malicious;
        names.insert(c.name);
    }
    CHECK(mal == 9);
    CHECK(names.size() == a.size());
}

TEST_CASE("every generated scenario runs") {
    for (const auto& c : generate(10, 10, 11)) CHECK_NOTHROW(sim::run_scenario(c));
}

TEST_CASE("write and load round-trip") {
    const auto dir = temp_dir("corpus");
    const auto a = generate(3, 4, 5);
    write_corpus(dir.string(), a, 5);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(dumps(load_corpus(dir.string())) == dumps(a));
    fs::remove_all(dir);
    try {
        load_corpus(dir.string());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }
}

TEST_CASE("benign scenarios are never trigger gated and deliver nothing") {
    for (const auto& c : generate(15, 0, 2)) {
        CHECK(c.label == scenario::Label::Benign);
        CHECK_FALSE(is_trigger_gated(c));
        const auto rep = sim::run_scenario(c);
        CHECK(rep.cnc["deliveries"].empty());
    }
}

TEST_CASE("trigger gating") {
    auto fig1 = scenario::load_scenario(std::string(AVTLAB_SOURCE_DIR) + "/scenarios/fig1_malicious_server.json");
    CHECK(is_trigger_gated(fig1));
    auto ddos = scenario::load_scenario(std::string(AVTLAB_SOURCE_DIR) + "/scenarios/ddos.json");
    CHECK_FALSE(is_trigger_gated(ddos));
    auto planted = scenario::load_scenario(std::string(AVTLAB_SOURCE_DIR) + "/scenarios/control_planted.json");
    CHECK_FALSE(is_trigger_gated(planted));
}

TEST_CASE("crawler replay is a single quiet visit") {
    for (const auto& c : generate(5, 10, 8)) {
        const auto r = crawler_replay(c);
        CHECK(r.n_clients == 1);
        CHECK(r.cnc_script.empty());
        CHECK(r.user_event_script.size() == 1);
        CHECK(r.max_ticks == kCrawlerWindow);
        CHECK_FALSE(r.control_plant);
        const auto rep = sim::run_scenario(r);
        for (const auto& rec : rep.clients.at(0).event_log) CHECK(rec.tick <= kCrawlerWindow);
    }
}

TEST_CASE("shipped corpus is generate(20, 20, 7)") {
    CHECK(dumps(load_corpus(kCorpus)) == dumps(generate(20, 20, 7)));
}

TEST_CASE("shipped corpus evaluation") {
    const auto ev = evaluate_corpus(load_corpus(kCorpus));
    CHECK(ev.behavioral.tpr == 1.0);
    CHECK(ev.behavioral.fpr == 0.0);
    CHECK(ev.static_engine.tpr == 0.0);
    REQUIRE(ev.dynamic_trigger_gated.tpr.has_value());
    CHECK(*ev.dynamic_trigger_gated.tpr <= 0.2);
    CHECK(ev.runs.size() == 40);
    CHECK(ev.to_json()["behavioral"]["tpr"] == 1.0);
}

TEST_CASE("empty corpus") {
    try {
        evaluate_corpus({});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyCorpus);
    }
}
