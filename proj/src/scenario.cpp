#include "avtlab/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "avtlab/error.hpp"
#include "avtlab/rng.hpp"

namespace avtlab::scenario {

using nlohmann::json;

std::string_view to_string(Mode m) noexcept {
    return m == Mode::MaliciousServer ? "MaliciousServer" : "CompromisedApp";
}

std::string_view to_string(Label l) noexcept { return l == Label::Malicious ? "malicious" : "benign"; }

std::string client_id(std::uint32_t index) { return "client-" + std::to_string(index); }

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(Errc::ConfigInvalid, what); }

const json* opt(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

const json& need(const json& j, const char* key, const std::string& where) {
    const json* v = opt(j, key);
    if (!v) invalid(where + ": missing '" + key + "'");
    return *v;
}

std::uint64_t as_u64(const json& v, const std::string& where) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        invalid(where + ": expected non-negative integer");
    return v.get<std::uint64_t>();
}

std::string as_string(const json& v, const std::string& where) {
    if (!v.is_string()) invalid(where + ": expected string");
    return v.get<std::string>();
}

StringMap as_string_map(const json& v, const std::string& where) {
    if (!v.is_object()) invalid(where + ": expected object");
    StringMap out;
    for (const auto& [k, val] : v.items()) out[k] = as_string(val, where + "." + k);
    return out;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) invalid(where + ": expected object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) invalid(where + ": unknown key '" + k + "'");
}

json action_to_json(const CncAction& a) {
    if (auto* act = std::get_if<ActivateAction>(&a)) return {{"kind", "Activate"}, {"token", act->token}};
    return {{"kind", "Terminate"}};
}

CncAction action_from_json(const json& j, const std::string& where) {
    const std::string kind = as_string(need(j, "kind", where), where + ".kind");
    if (kind == "Activate") return ActivateAction{as_string(need(j, "token", where), where + ".token")};
    if (kind == "Terminate") return TerminateAction{};
    invalid(where + ".kind: unknown '" + kind + "'");
}

template <class F>
auto rethrow_as_config(const std::string& where, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == Errc::ConfigInvalid) throw;
        invalid(where + ": " + e.what());
    }
}

}  // namespace

json scripted_event_to_json(const ScriptedEvent& e) {
    if (std::holds_alternative<Visit>(e)) return {{"kind", "Visit"}};
    return client::user_event_to_json(std::get<client::UserEvent>(e));
}

ScriptedEvent scripted_event_from_json(const json& j) {
    const std::string where = "event";
    if (!j.is_object()) invalid(where + ": expected object");
    const std::string kind = as_string(need(j, "kind", where), where + ".kind");
    if (kind == "Visit") return Visit{};
    if (kind == "Keystroke") return client::UserEvent{client::Keystroke{as_string(need(j, "key", where), "key")}};
    if (kind == "ChatMessage")
        return client::UserEvent{client::ChatMessage{as_string(need(j, "text", where), "text")}};
    if (kind == "Navigate") {
        client::Navigate n;
        if (const json* p = opt(j, "page")) n.page = static_cast<client::PageId>(as_u64(*p, "page"));
        return client::UserEvent{n};
    }
    if (kind == "BrowserClose") return client::UserEvent{client::BrowserClose{}};
    if (kind == "MachineRestart") return client::UserEvent{client::MachineRestart{}};
    invalid(where + ".kind: unknown '" + kind + "'");
}

json to_json(const ScenarioConfig& c) {
    json j;
    j["name"] = c.name;
    j["label"] = std::string(to_string(c.label));
    j["mode"] = std::string(to_string(c.mode));
    j["payload_names"] = c.payload_names;
    j["payloads"] = json::array();
    for (const auto& p : c.inline_payloads) j["payloads"].push_back(payload::to_json(p));
    j["trigger_overrides"] = json::object();
    for (const auto& [k, t] : c.trigger_overrides) j["trigger_overrides"][k] = trigger_to_json(t);
    j["seeds"] = {{"obfuscation", c.seeds.obfuscation}, {"rng", c.seeds.rng}};
    j["n_clients"] = c.n_clients;
    j["urls"] = {{"app_origin", c.urls.app_origin}, {"cnc_url", c.urls.cnc_url}};
    j["victim_data"] = json::array();
    for (const auto& v : c.victim_data) j["victim_data"].push_back({{"cookies", v.cookies}, {"web_storage", v.web_storage}});
    j["user_event_script"] = json::array();
    for (const auto& e : c.user_event_script)
        j["user_event_script"].push_back({{"tick", e.tick}, {"client", e.client}, {"event", scripted_event_to_json(e.event)}});
    j["cnc_script"] = json::array();
    for (const auto& a : c.cnc_script) j["cnc_script"].push_back({{"tick", a.tick}, {"action", action_to_json(a.action)}});
    if (c.mapreduce) {
        j["mapreduce"] = {{"fn_id", std::string(to_string(c.mapreduce->fn_id))},
                          {"data", c.mapreduce->data},
                          {"chunk_size", c.mapreduce->chunk_size},
                          {"start_tick", c.mapreduce->start_tick},
                          {"min_clients", c.mapreduce->min_clients}};
    }
    if (c.ddos) {
        j["ddos"] = {{"target", c.ddos->target},         {"rate", c.ddos->rate},
                     {"duration", c.ddos->duration},     {"start_tick", c.ddos->start_tick},
                     {"min_clients", c.ddos->min_clients}};
    }
    j["network"] = {{"latency_ticks", c.network.latency_ticks}, {"drop_probability", c.network.drop_probability}};
    j["static_scripts"] = json::array();
    for (const auto& s : c.static_scripts)
        j["static_scripts"].push_back({{"script_id", s.script_id}, {"instructions", payload::to_json(s.instructions)}});
    j["client_policy"] = {{"flush_every", c.client_policy.flush_every}, {"flush_period", c.client_policy.flush_period}};
    j["control_plant"] = c.control_plant;
    j["max_ticks"] = c.max_ticks;
    return j;
}

ScenarioConfig from_json(const json& j) {
    check_keys(j,
               {"name", "label", "mode", "payload_names", "payloads", "trigger_overrides", "seeds", "n_clients", "urls",
                "victim_data", "user_event_script", "cnc_script", "mapreduce", "ddos", "network", "static_scripts",
                "client_policy", "control_plant", "max_ticks"},
               "scenario");
    ScenarioConfig c;
    if (const json* v = opt(j, "name")) c.name = as_string(*v, "name");
    if (const json* v = opt(j, "label")) {
        const std::string s = as_string(*v, "label");
        if (s == "malicious") c.label = Label::Malicious;
        else if (s == "benign") c.label = Label::Benign;
        else invalid("label: expected 'malicious' or 'benign'");
    }
    if (const json* v = opt(j, "mode")) {
        const std::string s = as_string(*v, "mode");
        if (s == "MaliciousServer") c.mode = Mode::MaliciousServer;
        else if (s == "CompromisedApp") c.mode = Mode::CompromisedApp;
        else invalid("mode: expected 'MaliciousServer' or 'CompromisedApp'");
    }
    if (const json* v = opt(j, "payload_names")) {
        if (!v->is_array()) invalid("payload_names: expected array");
        for (const auto& n : *v) c.payload_names.push_back(as_string(n, "payload_names[]"));
    }
    if (const json* v = opt(j, "payloads")) {
        if (!v->is_array()) invalid("payloads: expected array");
        for (const auto& p : *v)
            c.inline_payloads.push_back(rethrow_as_config("payloads[]", [&] { return payload::payload_from_json(p); }));
    }
    if (const json* v = opt(j, "trigger_overrides")) {
        if (!v->is_object()) invalid("trigger_overrides: expected object");
        for (const auto& [k, t] : v->items())
            c.trigger_overrides[k] = rethrow_as_config("trigger_overrides." + k, [&] { return trigger_from_json(t); });
    }
    if (const json* v = opt(j, "seeds")) {
        check_keys(*v, {"obfuscation", "rng"}, "seeds");
        if (const json* s = opt(*v, "obfuscation")) c.seeds.obfuscation = as_u64(*s, "seeds.obfuscation");
        if (const json* s = opt(*v, "rng")) c.seeds.rng = as_u64(*s, "seeds.rng");
    }
    if (const json* v = opt(j, "n_clients")) {
        const auto n = as_u64(*v, "n_clients");
        if (n > 100000) invalid("n_clients: too large");
        c.n_clients = static_cast<std::uint32_t>(n);
    }
    if (const json* v = opt(j, "urls")) {
        check_keys(*v, {"app_origin", "cnc_url"}, "urls");
        if (const json* s = opt(*v, "app_origin")) c.urls.app_origin = as_string(*s, "urls.app_origin");
        if (const json* s = opt(*v, "cnc_url")) c.urls.cnc_url = as_string(*s, "urls.cnc_url");
    }
    if (const json* v = opt(j, "victim_data")) {
        if (!v->is_array()) invalid("victim_data: expected array");
        for (const auto& d : *v) {
            check_keys(d, {"cookies", "web_storage"}, "victim_data[]");
            client::VictimData vd;
            if (const json* s = opt(d, "cookies")) vd.cookies = as_string_map(*s, "victim_data[].cookies");
            if (const json* s = opt(d, "web_storage")) vd.web_storage = as_string_map(*s, "victim_data[].web_storage");
            c.victim_data.push_back(std::move(vd));
        }
    }
    if (const json* v = opt(j, "user_event_script")) {
        if (!v->is_array()) invalid("user_event_script: expected array");
        for (const auto& e : *v) {
            check_keys(e, {"tick", "client", "event"}, "user_event_script[]");
            TimedEvent te;
            te.tick = as_u64(need(e, "tick", "user_event_script[]"), "user_event_script[].tick");
            te.client = static_cast<std::uint32_t>(
                as_u64(need(e, "client", "user_event_script[]"), "user_event_script[].client"));
            te.event = scripted_event_from_json(need(e, "event", "user_event_script[]"));
            c.user_event_script.push_back(std::move(te));
        }
    }
    if (const json* v = opt(j, "cnc_script")) {
        if (!v->is_array()) invalid("cnc_script: expected array");
        for (const auto& a : *v) {
            check_keys(a, {"tick", "action"}, "cnc_script[]");
            c.cnc_script.push_back({as_u64(need(a, "tick", "cnc_script[]"), "cnc_script[].tick"),
                                    action_from_json(need(a, "action", "cnc_script[]"), "cnc_script[].action")});
        }
    }
    if (const json* v = opt(j, "mapreduce"); v && !v->is_null()) {
        check_keys(*v, {"fn_id", "data", "chunk_size", "start_tick", "min_clients"}, "mapreduce");
        cnc::MapReduceJob job;
        job.fn_id = rethrow_as_config("mapreduce.fn_id", [&] {
            return fn_id_from_string(as_string(need(*v, "fn_id", "mapreduce"), "mapreduce.fn_id"));
        });
        job.data = as_string(need(*v, "data", "mapreduce"), "mapreduce.data");
        job.chunk_size = as_u64(need(*v, "chunk_size", "mapreduce"), "mapreduce.chunk_size");
        if (const json* s = opt(*v, "start_tick")) job.start_tick = as_u64(*s, "mapreduce.start_tick");
        if (const json* s = opt(*v, "min_clients")) job.min_clients = as_u64(*s, "mapreduce.min_clients");
        c.mapreduce = std::move(job);
    }
    if (const json* v = opt(j, "ddos"); v && !v->is_null()) {
        check_keys(*v, {"target", "rate", "duration", "start_tick", "min_clients"}, "ddos");
        cnc::DdosPlan d;
        d.target = as_string(need(*v, "target", "ddos"), "ddos.target");
        d.rate = as_u64(need(*v, "rate", "ddos"), "ddos.rate");
        d.duration = as_u64(need(*v, "duration", "ddos"), "ddos.duration");
        if (const json* s = opt(*v, "start_tick")) d.start_tick = as_u64(*s, "ddos.start_tick");
        if (const json* s = opt(*v, "min_clients")) d.min_clients = as_u64(*s, "ddos.min_clients");
        c.ddos = std::move(d);
    }
    if (const json* v = opt(j, "network")) {
        check_keys(*v, {"latency_ticks", "drop_probability"}, "network");
        if (const json* s = opt(*v, "latency_ticks")) c.network.latency_ticks = as_u64(*s, "network.latency_ticks");
        if (const json* s = opt(*v, "drop_probability")) {
            if (!s->is_number()) invalid("network.drop_probability: expected number");
            c.network.drop_probability = s->get<double>();
        }
    }
    if (const json* v = opt(j, "static_scripts")) {
        if (!v->is_array()) invalid("static_scripts: expected array");
        for (const auto& s : *v) {
            check_keys(s, {"script_id", "instructions"}, "static_scripts[]");
            client::StaticScript ss;
            ss.script_id = as_string(need(s, "script_id", "static_scripts[]"), "static_scripts[].script_id");
            ss.instructions = rethrow_as_config("static_scripts[].instructions", [&] {
                return payload::instructions_from_json(need(s, "instructions", "static_scripts[]"));
            });
            c.static_scripts.push_back(std::move(ss));
        }
    }
    if (const json* v = opt(j, "client_policy")) {
        check_keys(*v, {"flush_every", "flush_period"}, "client_policy");
        if (const json* s = opt(*v, "flush_every")) c.client_policy.flush_every = as_u64(*s, "client_policy.flush_every");
        if (const json* s = opt(*v, "flush_period"))
            c.client_policy.flush_period = as_u64(*s, "client_policy.flush_period");
    }
    if (const json* v = opt(j, "control_plant")) {
        if (!v->is_boolean()) invalid("control_plant: expected boolean");
        c.control_plant = v->get<bool>();
    }
    if (const json* v = opt(j, "max_ticks")) c.max_ticks = as_u64(*v, "max_ticks");
    validate(c);
    return c;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) invalid("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    json j = json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) invalid("'" + path + "' is not valid JSON");
    return from_json(j);
}

void validate(const ScenarioConfig& c) {
    if (c.n_clients < 1) invalid("n_clients must be >= 1");
    if (!(c.network.drop_probability >= 0.0 && c.network.drop_probability < 1.0))
        invalid("network.drop_probability must be in [0,1)");
    if (c.network.latency_ticks < 1) invalid("network.latency_ticks must be >= 1");
    if (c.max_ticks < 1) invalid("max_ticks must be >= 1");
    if (c.client_policy.flush_every < 1) invalid("client_policy.flush_every must be >= 1");
    if (c.victim_data.size() > c.n_clients) invalid("victim_data has more entries than n_clients");
    rethrow_as_config("urls.app_origin", [&] { return client::Origin::parse(c.urls.app_origin); });
    rethrow_as_config("urls.cnc_url", [&] { return client::Origin::parse(c.urls.cnc_url); });
    for (const auto& e : c.user_event_script)
        if (e.client >= c.n_clients)
            invalid("user_event_script: client " + std::to_string(e.client) + " out of range");
    for (const auto& [name, t] : c.trigger_overrides)
        if (std::find(c.payload_names.begin(), c.payload_names.end(), name) == c.payload_names.end())
            invalid("trigger_overrides: '" + name + "' is not in payload_names");
    std::set<std::string> ids;
    for (const auto& p : resolved_payloads(c))
        if (!ids.insert(p.payload_id).second) invalid("payload '" + p.payload_id + "' listed twice");
    if (c.mapreduce && c.mapreduce->chunk_size < 1) invalid("mapreduce.chunk_size must be >= 1");
    if (c.ddos) {
        if (c.ddos->rate < 1 || c.ddos->duration < 1) invalid("ddos.rate and ddos.duration must be >= 1");
        rethrow_as_config("ddos.target", [&] { return client::Origin::parse(c.ddos->target); });
    }
    std::set<std::string> script_ids;
    for (const auto& s : c.static_scripts) {
        if (s.script_id.empty() || !script_ids.insert(s.script_id).second)
            invalid("static_scripts: empty or duplicate script_id '" + s.script_id + "'");
        rethrow_as_config("static_scripts." + s.script_id, [&] {
            payload::validate_script(s.instructions);
            return 0;
        });
    }
}

std::vector<payload::Payload> resolved_payloads(const ScenarioConfig& c) {
    std::vector<payload::Payload> out;
    for (const auto& name : c.payload_names) {
        std::optional<payload::Payload> p;
        for (const auto& ip : c.inline_payloads)
            if (ip.payload_id == name) p = ip;
        if (!p) p = payload::builtin_payload(name);
        if (!p) invalid("payload '" + name + "' is neither builtin nor inline");
        if (auto it = c.trigger_overrides.find(name); it != c.trigger_overrides.end()) p->trigger = it->second;
        rethrow_as_config("payload '" + name + "'", [&] {
            payload::validate(*p);
            return 0;
        });
        out.push_back(std::move(*p));
    }
    return out;
}

cnc::CncConfig cnc_config(const ScenarioConfig& c) {
    cnc::CncConfig cc;
    cc.payloads = resolved_payloads(c);
    cc.obfuscation_seed = c.seeds.obfuscation;
    cc.latency_ticks = c.network.latency_ticks;
    cc.n_clients = c.n_clients;
    cc.job = c.mapreduce;
    cc.ddos = c.ddos;
    return cc;
}

bool has_delivery_stub(const ScenarioConfig& c) {
    return !c.payload_names.empty() || c.mapreduce.has_value() || c.ddos.has_value();
}

client::Origin visit_origin(const ScenarioConfig& c) {
    if (c.mode == Mode::CompromisedApp) return client::Origin::parse(c.urls.app_origin);
    client::Origin o = client::Origin::parse(c.urls.cnc_url);
    if (o.scheme == "ws") o.scheme = "http";
    if (o.scheme == "wss") o.scheme = "https";
    return o;
}

std::vector<client::StaticScript> page_scripts(const ScenarioConfig& c) {
    std::vector<client::StaticScript> scripts = c.static_scripts;
    if (!has_delivery_stub(c)) return scripts;
    payload::InstructionList stub{payload::Instruction{payload::OpenSocket{c.urls.cnc_url}}};
    if (c.mode == Mode::CompromisedApp) {
        // The stub rides inside a third-party library the app already loads.
        scripts.push_back({"vendor/widget-lib.js", std::move(stub)});
    } else {
        scripts.insert(scripts.begin(), client::StaticScript{"index.js", std::move(stub)});
    }
    return scripts;
}

void override_seeds(ScenarioConfig& c, std::uint64_t root) {
    c.seeds.obfuscation = derive_seed(root, "obfuscation");
    c.seeds.rng = derive_seed(root, "rng");
}

}  // namespace avtlab::scenario
