#include "avtlab/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "avtlab/corpus.hpp"
#include "avtlab/detector.hpp"
#include "avtlab/error.hpp"
#include "avtlab/live_server.hpp"
#include "avtlab/scenario.hpp"
#include "avtlab/simulation.hpp"

namespace avtlab::cli {

using nlohmann::json;

namespace {

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("AVTLAB_SEED");
    if (!v || !*v) return std::nullopt;
    std::uint64_t seed = 0;
    const std::string s(v);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw Error(Errc::ConfigInvalid, "AVTLAB_SEED must be an unsigned integer, got '" + s + "'");
    return seed;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(Errc::Io, "cannot write " + path);
    f << text;
    if (!f) throw Error(Errc::Io, "write failed for " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(Errc::ConfigInvalid, "cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

scenario::ScenarioConfig load_with_env(const std::string& path) {
    auto cfg = scenario::load_scenario(path);
    if (auto seed = env_seed()) scenario::override_seeds(cfg, *seed);
    return cfg;
}

json verdicts_for(const sim::RunReport& r, const std::string& engine) {
    json v = json::object();
    detect::DetectorConfig cfg;
    if (engine == "behavioral" || engine == "both") v["behavioral"] = detect::detect(r, cfg, detect::Engine::Behavioral).to_json();
    if (engine == "static" || engine == "both") v["static"] = detect::detect(r, cfg, detect::Engine::Static).to_json();
    return v;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string summarize(const sim::RunReport& r) {
    std::ostringstream o;
    o << "scenario " << r.name << " (" << r.label << "), " << r.ticks << " ticks, " << r.clients.size() << " client(s)\n";
    for (const auto& c : r.clients) {
        std::map<std::string, std::size_t> kinds;
        for (const auto& rec : c.event_log) ++kinds[rec.kind];
        o << "  " << c.client_id << ": " << c.event_log.size() << " events, " << c.filesystem_log.size() << " file write(s)\n";
        for (const auto& [k, n] : kinds) o << "    " << k << " x" << n << "\n";
        for (const auto& f : c.filesystem_log) o << "    wrote " << f.path << " (" << f.cause << ") at tick " << f.tick << "\n";
    }
    const auto& cnc = r.cnc;
    if (cnc.contains("deliveries")) o << "cnc: " << cnc["deliveries"].size() << " deliveries";
    if (cnc.contains("exfil_store")) {
        std::size_t keys = 0, snaps = 0;
        for (const auto& [client, e] : cnc["exfil_store"].items()) {
            keys += e["keystrokes"].size();
            snaps += e["storage"].size();
        }
        o << ", " << keys << " keystrokes and " << snaps << " storage snapshot(s) exfiltrated";
    }
    o << "\n";
    if (cnc.contains("mapreduce") && !cnc["mapreduce"].is_null()) o << "mapreduce: " << cnc["mapreduce"].dump() << "\n";
    for (const auto& [target, n] : r.target_observables) o << "target " << target << ": " << n << " request(s)\n";
    if (!r.network.is_null()) o << "network: " << r.network.dump() << "\n";
    if (!r.verdicts.is_null())
        for (const auto& [engine, v] : r.verdicts.items())
            o << "verdict " << engine << ": " << (v.value("detected", false) ? "detected" : "clean") << " score "
              << v.value("score", 0.0) << "\n";
    return o.str();
}

int fail(std::ostream& err, std::string_view code, const std::string& detail, int status) {
    err << "ERR:" << code << ":" << detail << "\n";
    return status;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"avtlab: WebSocket/worker attack simulator and behavior detector", "avtlab"};
    app.require_subcommand(1);

    std::string run_path, run_out;
    bool run_detect = false;
    auto* run_cmd = app.add_subcommand("run", "Run a scenario and write its report");
    run_cmd->add_option("scenario", run_path, "scenario JSON")->required();
    run_cmd->add_option("--out", run_out, "report path (default stdout)");
    run_cmd->add_flag("--detect", run_detect, "attach behavioral and static verdicts");

    std::string det_path, det_engine = "both", det_out;
    auto* det_cmd = app.add_subcommand("detect", "Score a report or an NDJSON event log");
    det_cmd->add_option("input", det_path, "report JSON or .ndjson event log")->required();
    det_cmd->add_option("--engine", det_engine, "static|behavioral|both")
        ->check(CLI::IsMember({"static", "behavioral", "both"}));
    det_cmd->add_option("--out", det_out, "verdict path (default stdout)");

    std::size_t n_benign = 20, n_malicious = 20;
    std::uint64_t corpus_seed = 1;
    std::string corpus_dir = "corpus";
    auto* corpus_cmd = app.add_subcommand("corpus", "Labeled scenario corpus");
    corpus_cmd->require_subcommand(1);
    auto* gen_cmd = corpus_cmd->add_subcommand("gen", "Generate a corpus directory");
    gen_cmd->add_option("--benign", n_benign, "benign scenarios");
    gen_cmd->add_option("--malicious", n_malicious, "malicious scenarios");
    gen_cmd->add_option("--seed", corpus_seed, "root seed");
    gen_cmd->add_option("--out", corpus_dir, "output directory");

    std::string eval_dir, eval_out;
    auto* eval_cmd = app.add_subcommand("evaluate", "Run a corpus and score every engine");
    eval_cmd->add_option("corpus-dir", eval_dir, "directory with manifest.json")->required();
    eval_cmd->add_option("--out", eval_out, "metrics path (default stdout)");

    live::LiveOptions live_opts;
    std::string serve_scenario, serve_out;
    std::string static_dir;
    std::uint64_t serve_max_ticks = 0;
    auto* serve_cmd = app.add_subcommand("serve", "Live WebSocket C&C endpoint");
    serve_cmd->add_option("--scenario", serve_scenario, "scenario JSON")->required();
    serve_cmd->add_option("--port", live_opts.port, "TCP port (0 picks one)");
    serve_cmd->add_option("--host", live_opts.host, "bind address");
    serve_cmd->add_option("--tick-ms", live_opts.tick_ms, "wall-clock milliseconds per tick");
    serve_cmd->add_option("--static-dir", static_dir, "directory served over HTTP GET");
    serve_cmd->add_option("--max-ticks", serve_max_ticks, "stop after this many ticks (0 = until signalled)");
    serve_cmd->add_option("--out", serve_out, "report path written on shutdown (default stdout)");

    std::string rep_path;
    auto* rep_cmd = app.add_subcommand("report", "Human-readable report summary");
    rep_cmd->add_option("report", rep_path, "report JSON")->required();

    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        return fail(err, "ConfigInvalid", e.what(), 1);
    }

    try {
        if (*run_cmd) {
            auto report = sim::run_scenario(load_with_env(run_path));
            if (run_detect) report.verdicts = verdicts_for(report, "both");
            emit(report.dump(), run_out, out);
        } else if (*det_cmd) {
            json v = json::object();
            if (ends_with(det_path, ".ndjson")) {
                if (det_engine == "static")
                    throw Error(Errc::ConfigInvalid, "an event log has no artifacts for the static engine");
                detect::BehaviorMonitor m{detect::DetectorConfig{}};
                m.feed(read_file(det_path));
                m.finish();
                v["behavioral"] = m.verdict().to_json();
            } else {
                v = verdicts_for(sim::load_report(det_path), det_engine);
            }
            emit(v.dump(2) + "\n", det_out, out);
        } else if (*gen_cmd) {
            const std::uint64_t seed = env_seed().value_or(corpus_seed);
            corpus::write_corpus(corpus_dir, corpus::generate(n_benign, n_malicious, seed), seed);
            out << "wrote " << (n_benign + n_malicious) << " scenarios to " << corpus_dir << "\n";
        } else if (*eval_cmd) {
            const auto ev = corpus::evaluate_corpus(corpus::load_corpus(eval_dir));
            emit(ev.to_json().dump(2) + "\n", eval_out, out);
        } else if (*serve_cmd) {
            live_opts.scenario = load_with_env(serve_scenario);
            if (!static_dir.empty()) {
                if (!std::filesystem::is_directory(static_dir))
                    throw Error(Errc::ConfigInvalid, "static dir " + static_dir + " is not a directory");
                live_opts.static_dir = static_dir;
            }
            if (serve_max_ticks) live_opts.max_ticks = serve_max_ticks;
            live::LiveServer server(live_opts);
            err << "listening on " << live_opts.host << ":" << server.port() << std::endl;
            server.run();
            emit(server.report().dump(2) + "\n", serve_out, out);
        } else if (*rep_cmd) {
            out << summarize(sim::load_report(rep_path));
        }
        return 0;
    } catch (const Error& e) {
        return fail(err, to_string(e.code()), e.detail(), 1);
    } catch (const std::exception& e) {
        return fail(err, "Internal", e.what(), 2);
    }
}

}  // namespace avtlab::cli
