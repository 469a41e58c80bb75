#include "avtlab/simulation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "avtlab/error.hpp"

namespace avtlab::sim {

using nlohmann::json;

// ---------------------------------------------------------------------------
// SimClock

void SimClock::schedule(std::uint64_t tick, Action action) { queue_.push(Entry{tick, seq_++, std::move(action)}); }

void SimClock::run_until(std::uint64_t tick) {
    while (!queue_.empty() && queue_.top().tick <= tick) {
        Action a = queue_.top().action;
        queue_.pop();
        a();
    }
}

std::optional<std::uint64_t> SimClock::next_tick() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.top().tick;
}

// ---------------------------------------------------------------------------
// Report

namespace {

json file_write_to_json(const client::FileWrite& f) {
    json j = {{"path", f.path}, {"cause", f.cause}, {"tick", f.tick}, {"content", f.content}};
    j["sw"] = f.sw ? json(*f.sw) : json(nullptr);
    return j;
}

client::FileWrite file_write_from_json(const json& j) {
    client::FileWrite f;
    f.path = j.at("path").get<std::string>();
    f.cause = j.at("cause").get<std::string>();
    f.tick = j.at("tick").get<std::uint64_t>();
    f.content = j.at("content").get<std::string>();
    if (j.contains("sw") && !j.at("sw").is_null()) f.sw = j.at("sw").get<client::SwId>();
    return f;
}

std::string_view worker_state(client::WorkerLifecycle l) {
    return l == client::WorkerLifecycle::Running ? "Running" : "Terminated";
}

bool is_data_frame(const wire::Message& m) {
    return std::holds_alternative<wire::ExfilKeystrokes>(m) || std::holds_alternative<wire::ExfilStorage>(m) ||
           std::holds_alternative<wire::MapResult>(m);
}

}  // namespace

json client_summary(const client::BrowserState& s) {
    json pages = json::array();
    for (const auto& p : s.pages) {
        json scripts = json::array();
        for (const auto& sc : p.injected_scripts)
            scripts.push_back({{"script_id", sc.script_id},
                               {"source", std::string(client::to_string(sc.source))},
                               {"payload_ref", sc.payload_ref}});
        pages.push_back({{"page", p.page_id}, {"origin", p.origin.str()}, {"open", p.open}, {"injected_scripts", scripts}});
    }
    json workers = json::array();
    for (const auto& w : s.workers)
        workers.push_back({{"worker", w.worker_id},
                           {"parent_page", w.parent_page},
                           {"script_origin", w.script_origin.str()},
                           {"state", std::string(worker_state(w.lifecycle))}});
    json sws = json::array();
    for (const auto& w : s.service_workers)
        sws.push_back({{"sw", w.sw_id},
                       {"state", std::string(client::to_string(w.lifecycle))},
                       {"persist_file", w.persist_file},
                       {"registering_page", w.registering_page},
                       {"script_id", w.script_id},
                       {"payload_id", w.registering_payload}});
    json sockets = json::array();
    for (const auto& h : s.open_sockets)
        sockets.push_back({{"socket", h.socket_id}, {"url", h.url}, {"owner", h.owner.str()}});
    json pending = json::array();
    for (const auto& p : s.pending)
        pending.push_back({{"page", p.page}, {"payload_id", p.payload_id}, {"trigger", describe(p.trigger)}});
    return {{"pages", pages},
            {"workers", workers},
            {"service_workers", sws},
            {"open_sockets", sockets},
            {"pending_payloads", pending},
            {"keystroke_hooked", s.keystroke_hooked},
            {"clock", s.clock}};
}

json cnc_summary(const cnc::Coordinator& cnc) {
    json exfil = json::object();
    for (const auto& [client, e] : cnc.exfil_store()) {
        json keys = json::array();
        for (const auto& k : e.keystrokes) keys.push_back({{"key", k.key}, {"tick", k.tick}});
        json storage = json::array();
        for (const auto& s : e.storage) storage.push_back({{"cookies", s.cookies}, {"web_storage", s.web_storage}});
        exfil[client] = {{"keystrokes", keys}, {"storage", storage}};
    }
    json deliveries = json::array();
    for (const auto& d : cnc.deliveries())
        deliveries.push_back({{"client", d.client_id},
                              {"payload_id", d.payload_id},
                              {"seed", d.seed},
                              {"signature", d.signature},
                              {"code", d.code},
                              {"tick", d.tick}});
    json mr = nullptr;
    if (cnc.config().job) {
        const auto& m = cnc.mapreduce();
        mr = {{"fn_id", std::string(to_string(cnc.config().job->fn_id))},
              {"tasks", m.n_tasks},
              {"pending", m.pending.size()},
              {"completed", m.results.size()},
              {"reassignments", m.reassignments},
              {"started_tick", m.started_tick ? json(*m.started_tick) : json(nullptr)},
              {"completed_tick", m.completed_tick ? json(*m.completed_tick) : json(nullptr)},
              {"result", m.result ? json(*m.result) : json(nullptr)}};
    }
    return {{"log", cnc.log()},
             {"exfil_store", exfil},
             {"deliveries", deliveries},
             {"mapreduce", mr},
             {"ddos_issued", cnc.ddos_issued()},
             {"connected_clients", cnc.connected_clients()}};
}

json RunReport::to_json() const {
    json j;
    j["name"] = name;
    j["label"] = label;
    j["config"] = config;
    j["seeds"] = seeds;
    j["ticks"] = ticks;
    j["clients"] = json::array();
    for (const auto& c : clients) {
        json log = json::array();
        for (const auto& r : c.event_log) log.push_back(r.to_json());
        json fs = json::array();
        for (const auto& f : c.filesystem_log) fs.push_back(file_write_to_json(f));
        j["clients"].push_back({{"client_id", c.client_id}, {"event_log", log}, {"filesystem_log", fs}, {"final", c.final_state}});
    }
    j["cnc"] = cnc;
    j["target_observables"] = target_observables;
    j["network"] = network;
    j["static_assets"] = json::array();
    for (const auto& a : static_assets) j["static_assets"].push_back({{"path", a.path}, {"bytes", a.bytes}});
    if (!verdicts.is_null()) j["verdicts"] = verdicts;
    return j;
}

RunReport RunReport::from_json(const json& j) {
    try {
        RunReport r;
        r.name = j.value("name", std::string());
        r.label = j.value("label", std::string());
        r.config = j.value("config", json::object());
        r.seeds = j.value("seeds", json::object());
        r.ticks = j.value("ticks", std::uint64_t{0});
        for (const auto& c : j.at("clients")) {
            ClientReport cr;
            cr.client_id = c.at("client_id").get<std::string>();
            for (const auto& rec : c.at("event_log")) cr.event_log.push_back(LogRecord::from_json(rec));
            for (const auto& f : c.at("filesystem_log")) cr.filesystem_log.push_back(file_write_from_json(f));
            cr.final_state = c.value("final", json::object());
            r.clients.push_back(std::move(cr));
        }
        r.cnc = j.value("cnc", json::object());
        if (j.contains("target_observables"))
            r.target_observables = j.at("target_observables").get<std::map<std::string, std::uint64_t>>();
        r.network = j.value("network", json::object());
        if (j.contains("static_assets"))
            for (const auto& a : j.at("static_assets"))
                r.static_assets.push_back({a.at("path").get<std::string>(), a.at("bytes").get<std::string>()});
        if (j.contains("verdicts")) r.verdicts = j.at("verdicts");
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::ConfigInvalid, std::string("malformed report: ") + e.what());
    } catch (const Error& e) {
        throw Error(Errc::ConfigInvalid, std::string("malformed report: ") + e.what());
    }
}

std::string RunReport::dump() const { return to_json().dump(2) + "\n"; }

std::vector<LogRecord> RunReport::all_events() const {
    std::vector<LogRecord> out;
    for (const auto& c : clients) out.insert(out.end(), c.event_log.begin(), c.event_log.end());
    return out;
}

RunReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::ConfigInvalid, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    json j = json::parse(ss.str(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(Errc::ConfigInvalid, "'" + path + "' is not a JSON report");
    return RunReport::from_json(j);
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(scenario::ScenarioConfig cfg)
    : cfg_((scenario::validate(cfg), std::move(cfg))),
      cnc_origin_(client::Origin::parse(cfg_.urls.cnc_url)),
      page_origin_(scenario::visit_origin(cfg_)),
      page_scripts_(scenario::page_scripts(cfg_)),
      cnc_(scenario::cnc_config(cfg_)),
      net_rng_(derive_seed(cfg_.seeds.rng, "network")) {
    client::ClientPolicy policy = cfg_.client_policy;
    policy.plant_delivered_blobs = cfg_.control_plant;
    for (std::uint32_t i = 0; i < cfg_.n_clients; ++i) {
        client::VictimData v = i < cfg_.victim_data.size() ? cfg_.victim_data[i] : client::VictimData{};
        clients_.push_back(client::make_browser(scenario::client_id(i), std::move(v), policy));
    }
    events_ = cfg_.user_event_script;
    std::stable_sort(events_.begin(), events_.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
    actions_ = cfg_.cnc_script;
    std::stable_sort(actions_.begin(), actions_.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
    for (const auto& e : events_) last_scripted_tick_ = std::max(last_scripted_tick_, e.tick);
    for (const auto& a : actions_) last_scripted_tick_ = std::max(last_scripted_tick_, a.tick);
}

void Simulation::route(std::uint32_t ci, client::Outbox& out) {
    const std::uint64_t arrive = now_ + cfg_.network.latency_ticks;
    const double p = cfg_.network.drop_probability;
    for (auto& o : out) {
        const cnc::ConnId conn = (static_cast<cnc::ConnId>(ci) << 32) | o.socket;
        switch (o.kind) {
            case client::Outbound::Kind::Connect:
                if (!client::same_origin(client::Origin::parse(o.url), cnc_origin_)) break;
                links_[conn] = Link{ci, o.socket};
                clock_.schedule(arrive, [this, conn] { cnc_.on_connect(conn, now_); });
                break;
            case client::Outbound::Kind::Frame: {
                if (!links_.count(conn) || !o.message) break;
                ++frames_up_;
                if (is_data_frame(*o.message) && p > 0.0 && net_rng_.bernoulli(p)) {
                    ++frames_dropped_;
                    break;
                }
                std::string frame = wire::encode_frame(*o.message);
                clock_.schedule(arrive, [this, conn, frame = std::move(frame)] {
                    downlink(cnc_.on_frame(conn, frame, now_));
                });
                break;
            }
            case client::Outbound::Kind::Close:
                if (!links_.count(conn)) break;
                clock_.schedule(arrive, [this, conn] { cnc_.on_disconnect(conn, now_); });
                break;
            case client::Outbound::Kind::HttpRequest:
                ++requests_sent_;
                if (p > 0.0 && net_rng_.bernoulli(p)) {
                    ++requests_dropped_;
                    break;
                }
                clock_.schedule(arrive, [this, target = o.url] { ++targets_[target]; });
                break;
        }
    }
    out.clear();
}

void Simulation::downlink(const cnc::Frames& frames) {
    const std::uint64_t arrive = now_ + cfg_.network.latency_ticks;
    for (const auto& f : frames) {
        auto it = links_.find(f.conn);
        if (it == links_.end()) continue;
        ++frames_down_;
        const Link link = it->second;
        clock_.schedule(arrive, [this, link, frame = wire::encode_frame(f.message)] {
            auto& c = clients_[link.client];
            client::Outbox out;
            try {
                client::receive_frame(c, link.socket, frame, out);
            } catch (const Error& e) {
                if (e.code() == Errc::UnknownSocket) ++frames_undeliverable_;
                else client::log_fault(c, e);
            }
            route(link.client, out);
        });
    }
}

void Simulation::apply_event(const scenario::TimedEvent& e) {
    auto& c = clients_[e.client];
    client::Outbox out;
    try {
        if (std::holds_alternative<scenario::Visit>(e.event)) {
            client::open_page(c, page_origin_, page_scripts_, out);
        } else {
            client::deliver_user_event(c, std::get<client::UserEvent>(e.event), out);
        }
    } catch (const Error& err) {
        client::log_fault(c, err);
    }
    route(e.client, out);
}

bool Simulation::quiescent() const {
    if (now_ < last_scripted_tick_ || !clock_.empty() || !cnc_.idle()) return false;
    for (const auto& s : clients_) {
        if (!s.key_buffer.empty() && s.key_channel && s.policy.flush_period > 0) return false;
        for (const auto& p : s.pending)
            if (std::holds_alternative<AtTick>(p.trigger)) return false;
        for (const auto& sw : s.service_workers) {
            if (sw.lifecycle == client::SwLifecycle::Registered && sw.pending_sync) return false;
            if (sw.lifecycle == client::SwLifecycle::Running && !sw.rt.floods.empty()) return false;
        }
        for (const auto& w : s.workers)
            if (w.lifecycle == client::WorkerLifecycle::Running && !w.rt.floods.empty()) return false;
        for (const auto& p : s.pages)
            if (p.open && !p.rt.floods.empty()) return false;
    }
    return true;
}

void Simulation::step() {
    if (finished_) return;
    now_ = next_tick_++;
    for (std::uint32_t i = 0; i < clients_.size(); ++i) {
        client::Outbox out;
        client::advance_clock(clients_[i], now_, out);
        route(i, out);
    }
    clock_.run_until(now_);
    while (next_event_ < events_.size() && events_[next_event_].tick <= now_) apply_event(events_[next_event_++]);
    while (next_action_ < actions_.size() && actions_[next_action_].tick <= now_) {
        const auto& a = actions_[next_action_++].action;
        if (auto* act = std::get_if<scenario::ActivateAction>(&a)) downlink(cnc_.activate(act->token, now_));
        else downlink(cnc_.terminate_all(now_));
    }
    downlink(cnc_.on_tick(now_));
    finished_ = now_ + 1 >= cfg_.max_ticks || quiescent();
}

void Simulation::run() {
    while (!finished_) step();
}

RunReport Simulation::report() const {
    RunReport r;
    r.name = cfg_.name;
    r.label = std::string(scenario::to_string(cfg_.label));
    r.config = scenario::to_json(cfg_);
    r.seeds = {{"obfuscation", cfg_.seeds.obfuscation},
               {"rng", cfg_.seeds.rng},
               {"network", derive_seed(cfg_.seeds.rng, "network")}};
    r.ticks = now_;
    for (const auto& c : clients_)
        r.clients.push_back(ClientReport{c.client_id, c.event_log, c.filesystem_log, client_summary(c)});

    r.cnc = cnc_summary(cnc_);
    r.target_observables = targets_;
    r.network = {{"frames_up", frames_up_},
                 {"frames_down", frames_down_},
                 {"frames_dropped", frames_dropped_},
                 {"frames_undeliverable", frames_undeliverable_},
                 {"requests_sent", requests_sent_},
                 {"requests_dropped", requests_dropped_}};
    for (const auto& s : page_scripts_)
        r.static_assets.push_back({"/srv/" + page_origin_.host + "/" + s.script_id, payload::render_script(s.instructions)});
    return r;
}

RunReport run_scenario(const scenario::ScenarioConfig& cfg) {
    Simulation sim(cfg);
    sim.run();
    return sim.report();
}

}  // namespace avtlab::sim
