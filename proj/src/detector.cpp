#include "avtlab/detector.hpp"

#include <algorithm>

#include "avtlab/error.hpp"

namespace avtlab::detect {

using nlohmann::json;

namespace {

const std::array<std::string_view, kRules> kRuleIds{"R1", "R2", "R3", "R4", "R5"};

const std::set<std::string, std::less<>>& known_kinds() {
    static const std::set<std::string, std::less<>> kinds{
        "PageOpened",       "ScriptInjected",  "PageClosed",     "SocketOpened",        "SocketClosed",
        "FrameIn",          "FrameOut",        "PayloadPending", "TriggerFired",        "InstructionExecuted",
        "KeystrokeHookSet", "DataRead",        "WorkerSpawned",  "CrossOriginImport",   "WorkerTerminated",
        "SwRegistered",     "FileWrite",       "SwStateChanged", "OutboundRequest",     "UserEvent",
        "MapComputed",      "Fault"};
    return kinds;
}

[[noreturn]] void malformed(const LogRecord& r, const std::string& why) {
    throw Error(Errc::MalformedStream,
                r.client + " tick " + std::to_string(r.tick) + " seq " + std::to_string(r.seq) + ": " + why);
}

const std::string& string_field(const LogRecord& r, const char* key) {
    auto it = r.fields.find(key);
    if (it == r.fields.end() || !it->is_string()) malformed(r, std::string(r.kind) + " needs string '" + key + "'");
    return it->get_ref<const std::string&>();
}

bool bool_field(const LogRecord& r, const char* key) {
    auto it = r.fields.find(key);
    if (it == r.fields.end() || !it->is_boolean()) malformed(r, std::string(r.kind) + " needs boolean '" + key + "'");
    return it->get<bool>();
}

constexpr std::size_t kInjectedMemory = 64;

}  // namespace

std::string_view to_string(Engine e) noexcept { return e == Engine::Static ? "Static" : "Behavioral"; }

ArtifactCorpus ArtifactCorpus::from_report(const sim::RunReport& r) {
    ArtifactCorpus c;
    for (const auto& a : r.static_assets) c.at_rest_files.push_back({a.path, a.bytes, 0});
    for (const auto& cl : r.clients)
        for (const auto& f : cl.filesystem_log) c.at_rest_files.push_back({f.path, f.content, f.tick});
    return c;
}

json Verdict::to_json() const {
    json flags_json = json::array();
    for (const auto& f : flags)
        flags_json.push_back({{"rule_id", f.rule_id}, {"client", f.client}, {"tick", f.tick}, {"evidence", f.evidence}});
    return {{"engine", std::string(detect::to_string(engine))},
            {"detected", detected},
            {"score", score},
            {"flags", flags_json}};
}

void DetectorConfig::validate() const {
    if (!(threshold >= 0.0)) throw Error(Errc::ConfigInvalid, "threshold must be >= 0");
    for (double w : weights)
        if (!(w >= 0.0)) throw Error(Errc::ConfigInvalid, "rule weights must be >= 0");
}

DetectorConfig DetectorConfig::dynamic_engine() {
    DetectorConfig c;
    c.enabled = {false, false, false, false, true};
    return c;
}

std::vector<std::string> DetectorConfig::default_bad_tokens() {
    return {"eval(unescape(", "document.write(unescape(", "String.fromCharCode(", "CoinHive", "coinhive.min.js",
            "cryptonight",    "atob(",                    "new Function(",        "ActiveXObject",
            "WScript.Shell",  "\\x65\\x76\\x61\\x6c"};
}

payload::Digest digest_from_hex(std::string_view hex) {
    if (hex.size() != 64) throw Error(Errc::ConfigInvalid, "digest must be 64 hex characters");
    auto nib = [&](char c) -> std::uint8_t {
        if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
        throw Error(Errc::ConfigInvalid, "bad hex digit in digest");
    };
    payload::Digest d{};
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<std::uint8_t>(nib(hex[2 * i]) << 4 | nib(hex[2 * i + 1]));
    return d;
}

void add_delivered_digests(DetectorConfig& cfg, const sim::RunReport& r) {
    if (!r.cnc.contains("deliveries")) return;
    for (const auto& d : r.cnc.at("deliveries")) {
        // Recompute from the bytes rather than trusting the recorded field.
        cfg.signature_db.push_back(payload::sha256(d.at("code").get<std::string>()));
    }
}

Verdict static_scan(const ArtifactCorpus& corpus, const DetectorConfig& cfg) {
    Verdict v;
    v.engine = Engine::Static;
    std::set<payload::Digest> db(cfg.signature_db.begin(), cfg.signature_db.end());
    for (const auto& f : corpus.at_rest_files) {
        const auto digest = payload::sha256(f.bytes);
        if (db.count(digest))
            v.flags.push_back({"SIG", "", f.tick, {{"path", f.path}, {"sha256", payload::to_hex(digest)}, {"ticks", {f.tick}}}});
        for (const auto& tok : cfg.bad_tokens)
            if (!tok.empty() && f.bytes.find(tok) != std::string::npos)
                v.flags.push_back({"PAT", "", f.tick, {{"path", f.path}, {"token", tok}, {"ticks", {f.tick}}}});
    }
    v.score = static_cast<double>(v.flags.size());
    v.detected = v.score > 0.0 && v.score >= cfg.threshold;
    return v;
}

BehaviorMonitor::BehaviorMonitor(DetectorConfig cfg)
    : cfg_(std::move(cfg)), reader_([this](const LogRecord& r) { observe(r); }) {
    cfg_.validate();
}

void BehaviorMonitor::fire(std::size_t rule, const LogRecord& r, json evidence) {
    auto& st = clients_[r.client];
    if (!cfg_.enabled[rule] || st.fired[rule]) return;
    st.fired[rule] = true;
    any_fired_[rule] = true;
    flags_.push_back({std::string(kRuleIds[rule]), r.client, r.tick, std::move(evidence)});
}

void BehaviorMonitor::observe(const LogRecord& r) {
    if (!known_kinds().count(r.kind)) malformed(r, "unknown kind '" + r.kind + "'");
    auto& st = clients_[r.client];
    if (st.last && std::make_pair(r.tick, r.seq) <= *st.last) malformed(r, "record out of order");
    st.last = std::make_pair(r.tick, r.seq);

    if (r.kind == "FrameIn") {
        (void)string_field(r, "type");
        st.last_frame_in = r.tick;
    } else if (r.kind == "ScriptInjected") {
        if (string_field(r, "source") == "SocketInjected") {
            const std::string& id = string_field(r, "script_id");
            st.injected_ids.push_back(id);
            if (st.injected_ids.size() > kInjectedMemory) st.injected_ids.erase(st.injected_ids.begin());
            if (st.last_frame_in && r.tick - *st.last_frame_in <= cfg_.injection_window)
                fire(0, r, {{"script_id", id}, {"ticks", {*st.last_frame_in, r.tick}}});
        }
    } else if (r.kind == "WorkerSpawned") {
        if (bool_field(r, "cross_origin"))
            fire(1, r, {{"worker", r.fields.value("worker", json())}, {"script_origin", r.fields.value("script_origin", json())},
                        {"ticks", {r.tick}}});
    } else if (r.kind == "SwRegistered") {
        const std::string& id = string_field(r, "script_id");
        if (std::find(st.injected_ids.begin(), st.injected_ids.end(), id) != st.injected_ids.end())
            fire(2, r, {{"script_id", id}, {"sw", r.fields.value("sw", json())}, {"ticks", {r.tick}}});
    } else if (r.kind == "KeystrokeHookSet") {
        st.hook_tick = r.tick;
    } else if (r.kind == "FrameOut") {
        if (string_field(r, "type") == "ExfilKeystrokes" && st.hook_tick && r.tick - *st.hook_tick <= cfg_.keystroke_window)
            fire(3, r, {{"ticks", {*st.hook_tick, r.tick}}});
    } else if (r.kind == "OutboundRequest") {
        const std::string& target = string_field(r, "target");
        if (r.tick != st.flood_tick) {
            std::set<std::string> heavy;
            if (r.tick == st.flood_tick + 1)
                for (const auto& [t, n] : st.flood_counts)
                    if (n > cfg_.flood_rate) heavy.insert(t);
            st.heavy_prev = std::move(heavy);
            st.flood_counts.clear();
            st.flood_tick = r.tick;
        }
        const std::uint64_t n = ++st.flood_counts[target];
        if (n == cfg_.flood_rate + 1 && st.heavy_prev.count(target))
            fire(4, r, {{"target", target}, {"rate", cfg_.flood_rate}, {"ticks", {r.tick - 1, r.tick}}});
    }
}

void BehaviorMonitor::feed(std::string_view chunk) { reader_.feed(chunk); }

void BehaviorMonitor::finish() { reader_.finish(); }

Verdict BehaviorMonitor::verdict() const {
    Verdict v;
    v.engine = Engine::Behavioral;
    v.flags = flags_;
    for (std::size_t i = 0; i < kRules; ++i)
        if (any_fired_[i]) v.score += cfg_.weights[i];
    v.detected = !v.flags.empty() && v.score >= cfg_.threshold;
    return v;
}

Verdict behavior_monitor(const std::vector<LogRecord>& stream, const DetectorConfig& cfg) {
    BehaviorMonitor m(cfg);
    for (const auto& r : stream) m.observe(r);
    return m.verdict();
}

json Metrics::to_json() const {
    auto rate = [](const std::optional<double>& r) { return r ? json(*r) : json("n/a"); };
    return {{"tpr", rate(tpr)},
            {"fpr", rate(fpr)},
            {"malicious", malicious},
            {"benign", benign},
            {"true_positives", true_positives},
            {"false_positives", false_positives},
            {"per_rule_counts", per_rule_counts}};
}

Metrics evaluate(const std::vector<LabeledVerdict>& runs) {
    if (runs.empty()) throw Error(Errc::EmptyCorpus, "no runs to evaluate");
    Metrics m;
    for (const auto& r : runs) {
        if (r.malicious) {
            ++m.malicious;
            if (r.verdict.detected) ++m.true_positives;
        } else {
            ++m.benign;
            if (r.verdict.detected) ++m.false_positives;
        }
        std::set<std::string> rules;
        for (const auto& f : r.verdict.flags) rules.insert(f.rule_id);
        for (const auto& id : rules) ++m.per_rule_counts[id];
    }
    if (m.malicious) m.tpr = static_cast<double>(m.true_positives) / static_cast<double>(m.malicious);
    if (m.benign) m.fpr = static_cast<double>(m.false_positives) / static_cast<double>(m.benign);
    return m;
}

Verdict detect(const sim::RunReport& r, const DetectorConfig& cfg, Engine engine) {
    if (engine == Engine::Static) {
        DetectorConfig c = cfg;
        add_delivered_digests(c, r);
        return static_scan(ArtifactCorpus::from_report(r), c);
    }
    return behavior_monitor(r.all_events(), cfg);
}

Metrics evaluate(const std::vector<sim::RunReport>& runs, const DetectorConfig& cfg, Engine engine) {
    if (runs.empty()) throw Error(Errc::EmptyCorpus, "no runs to evaluate");
    std::vector<LabeledVerdict> labeled;
    for (const auto& r : runs) {
        if (r.label != "malicious" && r.label != "benign")
            throw Error(Errc::ConfigInvalid, "run '" + r.name + "' has no malicious/benign label");
        labeled.push_back({r.name, r.label == "malicious", detect(r, cfg, engine)});
    }
    return evaluate(labeled);
}

}  // namespace avtlab::detect
