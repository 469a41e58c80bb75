#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "avtlab/cli.hpp"
#include "avtlab/event_log.hpp"
#include "avtlab/simulation.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSrc = AVTLAB_SOURCE_DIR;

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "avtlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = avtlab::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch() {
    auto p = fs::temp_directory_path() / ("avtlab-cli-" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct EnvSeed {
    explicit EnvSeed(const char* v) { ::setenv("AVTLAB_SEED", v, 1); }
    ~EnvSeed() { ::unsetenv("AVTLAB_SEED"); }
};

}  // namespace

TEST_CASE("run fig1 prints a report with no file writes") {
    const auto r = cli({"run", kSrc + "/scenarios/fig1_malicious_server.json"});
    REQUIRE(r.code == 0);
    CHECK(r.err.empty());
    const auto j = json::parse(r.out);
    CHECK(j["clients"][0]["filesystem_log"].empty());
    CHECK_FALSE(j.contains("verdicts"));
}

TEST_CASE("run --detect attaches both verdicts") {
    const auto r = cli({"run", kSrc + "/scenarios/fig1_malicious_server.json", "--detect"});
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["verdicts"]["behavioral"]["detected"] == true);
    CHECK(j["verdicts"]["static"]["detected"] == false);
}

TEST_CASE("missing scenario is a config error") {
    const auto r = cli({"run", "missing.json"});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("ERR:ConfigInvalid:", 0) == 0);
    CHECK(r.out.empty());
}

TEST_CASE("argument errors and help") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({"detect", "x.json", "--engine", "psychic"}).code == 1);
    const auto h = cli({"--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("serve") != std::string::npos);
}

TEST_CASE("run --out, detect and report") {
    const auto dir = scratch();
    const auto rep = (dir / "fig2.json").string();
    REQUIRE(cli({"run", kSrc + "/scenarios/fig2_compromised_app.json", "--out", rep}).code == 0);
    const auto a = cli({"detect", rep, "--engine", "both"});
    const auto b = cli({"detect", rep, "--engine", "both"});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    const auto v = json::parse(a.out);
    CHECK(v["behavioral"]["detected"] == true);
    CHECK(v["static"]["detected"] == false);
    CHECK_FALSE(json::parse(cli({"detect", rep, "--engine", "static"}).out).contains("behavioral"));

    const auto s = cli({"report", rep});
    REQUIRE(s.code == 0);
    CHECK(s.out.find("scenario fig2") != std::string::npos);
    CHECK(s.out.find("ServiceWorker") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("detect on an NDJSON event log") {
    const auto dir = scratch();
    const auto report = avtlab::sim::run_scenario(avtlab::scenario::load_scenario(kSrc + "/scenarios/ddos.json"));
    std::vector<avtlab::LogRecord> all;
    for (const auto& c : report.clients) all.insert(all.end(), c.event_log.begin(), c.event_log.end());
    const auto path = (dir / "ddos.ndjson").string();
    std::ofstream(path) << avtlab::to_ndjson(all);
    const auto r = cli({"detect", path});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["behavioral"]["detected"] == true);
    CHECK(cli({"detect", path, "--engine", "static"}).code == 1);

    std::ofstream(dir / "bad.ndjson") << "{\"tick\":1}\n";
    const auto bad = cli({"detect", (dir / "bad.ndjson").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.rfind("ERR:MalformedStream:", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("corpus gen and evaluate") {
    const auto dir = scratch() / "corpus";
    const auto g = cli({"corpus", "gen", "--benign", "3", "--malicious", "3", "--seed", "4", "--out", dir.string()});
    REQUIRE(g.code == 0);
    CHECK(fs::exists(dir / "manifest.json"));
    const auto e = cli({"evaluate", dir.string()});
    REQUIRE(e.code == 0);
    const auto m = json::parse(e.out);
    CHECK(m["behavioral"]["tpr"] == 1.0);
    CHECK(m["behavioral"]["fpr"] == 0.0);
    CHECK(m["runs"].size() == 6);
    fs::remove_all(dir.parent_path());
}

TEST_CASE("AVTLAB_SEED overrides scenario and corpus seeds") {
    const auto fig2 = kSrc + "/scenarios/fig2_compromised_app.json";
    const auto plain = cli({"run", fig2}).out;
    std::string a, b;
    {
        EnvSeed s("12");
        a = cli({"run", fig2}).out;
        b = cli({"run", fig2}).out;
    }
    CHECK(a == b);
    CHECK(a != plain);

    const auto dir = scratch();
    {
        EnvSeed s("99");
        REQUIRE(cli({"corpus", "gen", "--benign", "1", "--malicious", "1", "--seed", "1", "--out", (dir / "x").string()}).code == 0);
    }
    REQUIRE(cli({"corpus", "gen", "--benign", "1", "--malicious", "1", "--seed", "99", "--out", (dir / "y").string()}).code == 0);
    CHECK(slurp(dir / "x" / "manifest.json") == slurp(dir / "y" / "manifest.json"));
    fs::remove_all(dir);

    EnvSeed bad("twelve");
    const auto r = cli({"run", fig2});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("ERR:ConfigInvalid:", 0) == 0);
}

TEST_CASE("evaluate on an empty directory") {
    const auto dir = scratch() / "empty";
    fs::create_directories(dir);
    const auto r = cli({"evaluate", dir.string()});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("ERR:ConfigInvalid:", 0) == 0);
    fs::remove_all(dir.parent_path());
}
