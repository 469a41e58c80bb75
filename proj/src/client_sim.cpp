#include "avtlab/client_sim.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "avtlab/mapreduce.hpp"

namespace avtlab::client {

using nlohmann::json;
using payload::Instruction;
using payload::InstructionList;

// ---------------------------------------------------------------------------
// Origins and small helpers

std::string Origin::str() const { return scheme + "://" + host + ":" + std::to_string(port); }

Origin Origin::parse(std::string_view url) {
    auto bad = [&](const char* why) {
        return Error(Errc::InvalidOrigin, "'" + std::string(url) + "': " + why);
    };
    const auto sep = url.find("://");
    if (sep == std::string_view::npos || sep == 0) throw bad("missing scheme");
    Origin o;
    for (char c : url.substr(0, sep)) {
        if (!std::isalpha(static_cast<unsigned char>(c))) throw bad("bad scheme");
        o.scheme += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    std::string_view rest = url.substr(sep + 3);
    rest = rest.substr(0, rest.find_first_of("/?#"));
    std::string_view host = rest;
    std::string_view port;
    if (auto colon = rest.rfind(':'); colon != std::string_view::npos) {
        host = rest.substr(0, colon);
        port = rest.substr(colon + 1);
    }
    if (host.empty()) throw bad("empty host");
    for (char c : host) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_')
            throw bad("bad host character");
        o.host += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (!port.empty()) {
        unsigned value = 0;
        auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
        if (ec != std::errc() || p != port.data() + port.size() || value > 65535)
            throw bad("bad port");
        o.port = static_cast<std::uint16_t>(value);
    } else if (o.scheme == "http" || o.scheme == "ws") {
        o.port = 80;
    } else if (o.scheme == "https" || o.scheme == "wss") {
        o.port = 443;
    } else {
        throw bad("no port and no default for scheme");
    }
    return o;
}

bool same_origin(const Origin& a, const Origin& b) {
    auto web = [](const std::string& scheme) -> std::string {
        if (scheme == "ws") return "http";
        if (scheme == "wss") return "https";
        return scheme;
    };
    return web(a.scheme) == web(b.scheme) && a.host == b.host && a.port == b.port;
}

std::string ContextRef::str() const {
    switch (kind) {
        case ContextKind::Page: return "page:" + std::to_string(id);
        case ContextKind::Worker: return "worker:" + std::to_string(id);
        case ContextKind::ServiceWorker: return "sw:" + std::to_string(id);
    }
    return "?";
}

std::string_view to_string(ScriptSource s) noexcept {
    return s == ScriptSource::Static ? "Static" : "SocketInjected";
}

std::string_view to_string(SwLifecycle s) noexcept {
    switch (s) {
        case SwLifecycle::Registered: return "Registered";
        case SwLifecycle::Running: return "Running";
        case SwLifecycle::Completed: return "Completed";
        case SwLifecycle::Killed: return "Killed";
    }
    return "?";
}

BrowserState make_browser(std::string client_id, VictimData victim, ClientPolicy policy) {
    BrowserState s;
    s.client_id = std::move(client_id);
    s.victim = std::move(victim);
    s.policy = policy;
    return s;
}

json user_event_to_json(const UserEvent& e) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Keystroke>) {
                return {{"kind", "Keystroke"}, {"key", v.key}};
            } else if constexpr (std::is_same_v<T, ChatMessage>) {
                return {{"kind", "ChatMessage"}, {"text", v.text}};
            } else if constexpr (std::is_same_v<T, Navigate>) {
                json j = {{"kind", "Navigate"}};
                if (v.page) j["page"] = *v.page;
                return j;
            } else if constexpr (std::is_same_v<T, BrowserClose>) {
                return {{"kind", "BrowserClose"}};
            } else {
                return {{"kind", "MachineRestart"}};
            }
        },
        e);
}

namespace {

// Restores the whole state (except the append-only event log, which is
// truncated) and the outbox unless committed.
class Transaction {
public:
    Transaction(BrowserState& s, Outbox& out) : s_(s), out_(out), out_size_(out.size()) {
        log_size_ = s.event_log.size();
        auto log = std::move(s.event_log);
        s.event_log = {};
        snapshot_ = s;
        s.event_log = std::move(log);
    }
    Transaction(const Transaction&) = delete;
    Transaction& operator=(const Transaction&) = delete;
    ~Transaction() {
        if (committed_) return;
        auto log = std::move(s_.event_log);
        log.resize(log_size_);
        s_ = std::move(snapshot_);
        s_.event_log = std::move(log);
        out_.resize(out_size_);
    }
    void commit() { committed_ = true; }

private:
    BrowserState& s_;
    Outbox& out_;
    std::size_t out_size_;
    std::size_t log_size_ = 0;
    BrowserState snapshot_;
    bool committed_ = false;
};

void log(BrowserState& s, std::string kind, json fields) {
    s.event_log.push_back(LogRecord{s.clock, s.next_seq++, s.client_id, std::move(kind), std::move(fields)});
}

// Record headers own "kind", so the event kind moves to "event".
json user_event_fields(const UserEvent& e) {
    json j = user_event_to_json(e);
    j["event"] = j["kind"];
    j.erase("kind");
    return j;
}

PageContext* page_ptr(BrowserState& s, PageId id) {
    return id < s.pages.size() ? &s.pages[id] : nullptr;
}
WorkerState* worker_ptr(BrowserState& s, WorkerId id) {
    return id < s.workers.size() ? &s.workers[id] : nullptr;
}
ServiceWorkerState* sw_ptr(BrowserState& s, SwId id) {
    return id < s.service_workers.size() ? &s.service_workers[id] : nullptr;
}

ContextRuntime* runtime(BrowserState& s, ContextRef ctx) {
    switch (ctx.kind) {
        case ContextKind::Page:
            if (auto* p = page_ptr(s, ctx.id)) return &p->rt;
            break;
        case ContextKind::Worker:
            if (auto* w = worker_ptr(s, ctx.id)) return &w->rt;
            break;
        case ContextKind::ServiceWorker:
            if (auto* w = sw_ptr(s, ctx.id)) return &w->rt;
            break;
    }
    return nullptr;
}

const Origin& context_origin(BrowserState& s, ContextRef ctx) {
    switch (ctx.kind) {
        case ContextKind::Page: return s.pages.at(ctx.id).origin;
        case ContextKind::Worker: return s.pages.at(s.workers.at(ctx.id).parent_page).origin;
        case ContextKind::ServiceWorker: return s.service_workers.at(ctx.id).registering_page_origin;
    }
    return s.pages.at(0).origin;
}

SocketHandle* socket_ptr(BrowserState& s, SocketId id) {
    for (auto& h : s.open_sockets)
        if (h.socket_id == id) return &h;
    return nullptr;
}

bool any_open_page(const BrowserState& s) {
    return std::any_of(s.pages.begin(), s.pages.end(), [](const PageContext& p) { return p.open; });
}

void send_frame(BrowserState& s, SocketId id, wire::Message m, Outbox& out) {
    const SocketHandle* h = socket_ptr(s, id);
    if (!h) return;
    log(s, "FrameOut", {{"socket", id}, {"type", std::string(wire::type_name(m))}});
    out.push_back(Outbound{Outbound::Kind::Frame, id, h->url, std::move(m)});
}

SocketId open_socket(BrowserState& s, ContextRef ctx, const std::string& url, Outbox& out) {
    Origin origin = Origin::parse(url);
    const bool cross = !same_origin(context_origin(s, ctx), origin);
    const SocketId id = s.next_socket++;
    s.open_sockets.push_back(SocketHandle{id, url, origin, ctx});
    log(s, "SocketOpened", {{"socket", id}, {"url", url}, {"ctx", ctx.str()}, {"cross_origin", cross}});
    out.push_back(Outbound{Outbound::Kind::Connect, id, url, std::nullopt});
    send_frame(s, id, wire::Register{s.client_id}, out);
    return id;
}

void close_socket(BrowserState& s, SocketId id, std::string_view reason, Outbox& out) {
    auto it = std::find_if(s.open_sockets.begin(), s.open_sockets.end(),
                           [&](const SocketHandle& h) { return h.socket_id == id; });
    if (it == s.open_sockets.end()) return;
    std::string url = it->url;
    s.open_sockets.erase(it);
    if (s.key_channel == id) s.key_channel.reset();
    log(s, "SocketClosed", {{"socket", id}, {"reason", std::string(reason)}});
    out.push_back(Outbound{Outbound::Kind::Close, id, std::move(url), std::nullopt});
}

void close_context_sockets(BrowserState& s, ContextRef ctx, std::string_view reason, Outbox& out) {
    std::vector<SocketId> ids;
    for (const auto& h : s.open_sockets)
        if (h.owner == ctx) ids.push_back(h.socket_id);
    for (auto id : ids) close_socket(s, id, reason, out);
}

void flush_keys(BrowserState& s, Outbox& out) {
    if (s.key_buffer.empty() || !s.key_channel || !socket_ptr(s, *s.key_channel)) return;
    wire::ExfilKeystrokes m{s.client_id, std::move(s.key_buffer)};
    s.key_buffer.clear();
    send_frame(s, *s.key_channel, std::move(m), out);
}

struct Exec {
    ContextRef ctx;
    std::string script_id;
    std::string payload_id;
};

void run_list(BrowserState& s, const Exec& ex, const InstructionList& list, Outbox& out);
void inject_impl(BrowserState& s, PageId page, const payload::ObfuscatedBlob& blob,
                 const std::optional<std::string>& cnc_origin, Outbox& out);

void terminate_worker(BrowserState& s, WorkerId id, std::string_view reason, Outbox& out) {
    WorkerState* w = worker_ptr(s, id);
    if (!w || w->lifecycle == WorkerLifecycle::Terminated) return;
    w->lifecycle = WorkerLifecycle::Terminated;
    w->rt.floods.clear();
    w->rt.map_fns.clear();
    log(s, "WorkerTerminated", {{"worker", id}, {"reason", std::string(reason)}});
    close_context_sockets(s, {ContextKind::Worker, id}, reason, out);
}

void end_service_worker(BrowserState& s, SwId id, SwLifecycle to, std::string_view reason, Outbox& out) {
    ServiceWorkerState* w = sw_ptr(s, id);
    if (!w || w->lifecycle == SwLifecycle::Completed || w->lifecycle == SwLifecycle::Killed) return;
    w->lifecycle = to;
    w->pending_sync = false;
    w->rt.floods.clear();
    w->rt.map_fns.clear();
    log(s, "SwStateChanged", {{"sw", id}, {"state", std::string(to_string(to))}, {"reason", std::string(reason)}});
    close_context_sockets(s, {ContextKind::ServiceWorker, id}, reason, out);
}

void maybe_complete(BrowserState& s, ContextRef ctx, Outbox& out) {
    if (ctx.kind == ContextKind::Worker) {
        WorkerState* w = worker_ptr(s, ctx.id);
        if (w && w->lifecycle == WorkerLifecycle::Running && w->body_done && w->rt.floods.empty() &&
            w->rt.map_fns.empty())
            terminate_worker(s, ctx.id, "completed", out);
    } else if (ctx.kind == ContextKind::ServiceWorker) {
        ServiceWorkerState* w = sw_ptr(s, ctx.id);
        if (w && w->lifecycle == SwLifecycle::Running && w->body_done && w->rt.floods.empty() &&
            w->rt.map_fns.empty())
            end_service_worker(s, ctx.id, SwLifecycle::Completed, "completed", out);
    }
}

void serve_maps_in(BrowserState& s, ContextRef ctx, Outbox& out) {
    if (!is_live(s, ctx)) return;
    ContextRuntime* rt = runtime(s, ctx);
    if (rt->map_fns.empty() || !rt->result_channel || !socket_ptr(s, *rt->result_channel)) return;
    for (auto it = s.map_inbox.begin(); it != s.map_inbox.end();) {
        if (!rt->map_fns.count(it->fn_id)) {
            ++it;
            continue;
        }
        wire::MapResult result{it->task_id, s.client_id, cnc::map_chunk(it->fn_id, it->chunk)};
        log(s, "MapComputed",
            {{"task_id", it->task_id}, {"fn_id", std::string(to_string(it->fn_id))}, {"ctx", ctx.str()}});
        it = s.map_inbox.erase(it);
        send_frame(s, *rt->result_channel, std::move(result), out);
        rt = runtime(s, ctx);
    }
}

void serve_maps(BrowserState& s, Outbox& out) {
    if (s.map_inbox.empty()) return;
    for (SwId i = 0; i < s.service_workers.size(); ++i) serve_maps_in(s, {ContextKind::ServiceWorker, i}, out);
    for (WorkerId i = 0; i < s.workers.size(); ++i) serve_maps_in(s, {ContextKind::Worker, i}, out);
    for (PageId i = 0; i < s.pages.size(); ++i) serve_maps_in(s, {ContextKind::Page, i}, out);
}

void emit_requests(BrowserState& s, ContextRef ctx, const std::string& target, std::uint64_t rate, Outbox& out) {
    for (std::uint64_t i = 0; i < rate; ++i) {
        log(s, "OutboundRequest", {{"target", target}, {"ctx", ctx.str()}});
        out.push_back(Outbound{Outbound::Kind::HttpRequest, 0, target, std::nullopt});
    }
}

void start_flood(BrowserState& s, ContextRef ctx, const std::string& target, std::uint64_t rate,
                 std::uint64_t duration, Outbox& out) {
    emit_requests(s, ctx, target, rate, out);
    if (duration > 1) runtime(s, ctx)->floods.push_back({target, rate, duration - 1});
}

WorkerId spawn_impl(BrowserState& s, PageId page, std::string_view url, const InstructionList& inner,
                    const Exec& parent, Outbox& out) {
    PageContext* p = page_ptr(s, page);
    if (!p || !p->open) throw Error(Errc::UnknownPage, "page " + std::to_string(page) + " is not open");
    Origin script_origin = Origin::parse(url);
    const Origin page_origin = p->origin;
    std::optional<std::string> provenance;
    if (ContextRuntime* rt = runtime(s, parent.ctx)) provenance = rt->cnc_origin;

    const auto id = static_cast<WorkerId>(s.workers.size());
    WorkerState w;
    w.worker_id = id;
    w.parent_page = page;
    w.script_origin = script_origin;
    w.inner_instructions = inner;
    w.rt.cnc_origin = provenance;
    s.workers.push_back(std::move(w));

    const bool cross = !same_origin(page_origin, script_origin);
    log(s, "WorkerSpawned",
        {{"worker", id}, {"page", page}, {"script_origin", script_origin.str()}, {"cross_origin", cross}});
    if (cross)
        log(s, "CrossOriginImport",
            {{"worker", id}, {"page_origin", page_origin.str()}, {"script_origin", script_origin.str()}});

    const ContextRef ctx{ContextKind::Worker, id};
    run_list(s, Exec{ctx, parent.script_id, parent.payload_id}, inner, out);
    if (WorkerState* again = worker_ptr(s, id)) again->body_done = true;
    maybe_complete(s, ctx, out);
    return id;
}

SwId register_impl(BrowserState& s, PageId page, const InstructionList& inner, std::string_view payload_id,
                   std::string_view script_id, Outbox& /*out*/) {
    PageContext* p = page_ptr(s, page);
    if (!p || !p->open) throw Error(Errc::UnknownPage, "page " + std::to_string(page) + " is not open");
    for (const auto& sw : s.service_workers) {
        const bool live = sw.lifecycle == SwLifecycle::Registered || sw.lifecycle == SwLifecycle::Running;
        if (live && sw.registering_payload == payload_id && sw.registering_page_origin == p->origin)
            throw Error(Errc::DuplicateRegistration,
                        "payload '" + std::string(payload_id) + "' already registered sw:" + std::to_string(sw.sw_id));
    }
    const auto id = static_cast<SwId>(s.service_workers.size());
    ServiceWorkerState sw;
    sw.sw_id = id;
    sw.registering_page = page;
    sw.registering_page_origin = p->origin;
    sw.lifecycle = SwLifecycle::Registered;
    sw.persist_file = "/profile/ServiceWorker/ScriptCache/" + s.client_id + "-sw" + std::to_string(id) + ".js";
    sw.inner_instructions = inner;
    sw.pending_sync = true;
    sw.registered_tick = s.clock;
    sw.registering_payload = std::string(payload_id);
    sw.script_id = std::string(script_id);
    sw.rt.cnc_origin = p->rt.cnc_origin;
    const std::string path = sw.persist_file;
    s.service_workers.push_back(std::move(sw));

    s.filesystem_log.push_back(
        FileWrite{path, std::string(kCauseServiceWorker), s.clock, payload::render_service_worker(inner), id});
    log(s, "SwRegistered",
        {{"sw", id}, {"page", page}, {"script_id", std::string(script_id)}, {"payload_id", std::string(payload_id)}});
    log(s, "FileWrite", {{"path", path}, {"cause", std::string(kCauseServiceWorker)}, {"sw", id}});
    return id;
}

void exec_one(BrowserState& s, const Exec& ex, const Instruction& ins, Outbox& out) {
    log(s, "InstructionExecuted",
        {{"ctx", ex.ctx.str()}, {"op", std::string(payload::op_name(ins))}, {"script_id", ex.script_id}});
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, payload::OpenSocket>) {
                open_socket(s, ex.ctx, v.url, out);
            } else if constexpr (std::is_same_v<T, payload::HookKeystrokes>) {
                if (ex.ctx.kind != ContextKind::Page)
                    throw Error(Errc::InvalidPayload, "HookKeystrokes outside a page");
                s.keystroke_hooked = true;
                s.hook_page = ex.ctx.id;
                log(s, "KeystrokeHookSet", {{"page", ex.ctx.id}});
            } else if constexpr (std::is_same_v<T, payload::ReadCookies>) {
                runtime(s, ex.ctx)->cookies_read = true;
                log(s, "DataRead", {{"ctx", ex.ctx.str()}, {"what", "cookies"}, {"entries", s.victim.cookies.size()}});
            } else if constexpr (std::is_same_v<T, payload::ReadWebStorage>) {
                runtime(s, ex.ctx)->storage_read = true;
                log(s, "DataRead",
                    {{"ctx", ex.ctx.str()}, {"what", "web_storage"}, {"entries", s.victim.web_storage.size()}});
            } else if constexpr (std::is_same_v<T, payload::Send>) {
                std::optional<SocketId> channel;
                for (const auto& h : s.open_sockets)
                    if (h.owner == ex.ctx && h.url == v.channel_url) channel = h.socket_id;
                if (!channel)
                    throw Error(Errc::SendWithoutSocket, ex.ctx.str() + " has no open socket to '" + v.channel_url + "'");
                ContextRuntime* rt = runtime(s, ex.ctx);
                switch (v.what) {
                    case payload::SendWhat::Keystrokes:
                        s.key_channel = *channel;
                        flush_keys(s, out);
                        break;
                    case payload::SendWhat::Storage:
                        send_frame(s, *channel,
                                   wire::ExfilStorage{s.client_id, rt->cookies_read ? s.victim.cookies : StringMap{},
                                                      rt->storage_read ? s.victim.web_storage : StringMap{}},
                                   out);
                        break;
                    case payload::SendWhat::MapResult:
                        rt->result_channel = *channel;
                        serve_maps_in(s, ex.ctx, out);
                        break;
                }
            } else if constexpr (std::is_same_v<T, payload::SpawnWorkerFromBlob>) {
                PageId page = ex.ctx.id;
                if (ex.ctx.kind == ContextKind::Worker) page = s.workers.at(ex.ctx.id).parent_page;
                else if (ex.ctx.kind == ContextKind::ServiceWorker)
                    throw Error(Errc::InvalidPayload, "service workers cannot spawn workers");
                spawn_impl(s, page, v.script_origin_url, v.inner, ex, out);
            } else if constexpr (std::is_same_v<T, payload::RegisterServiceWorker>) {
                if (ex.ctx.kind != ContextKind::Page)
                    throw Error(Errc::InvalidPayload, "RegisterServiceWorker outside a page");
                register_impl(s, ex.ctx.id, v.inner, ex.payload_id, ex.script_id, out);
            } else if constexpr (std::is_same_v<T, payload::ComputeMap>) {
                runtime(s, ex.ctx)->map_fns.insert(v.fn_id);
                serve_maps_in(s, ex.ctx, out);
            } else if constexpr (std::is_same_v<T, payload::HttpFlood>) {
                start_flood(s, ex.ctx, v.target, v.rate, v.duration, out);
            }
        },
        ins.op);
}

void run_list(BrowserState& s, const Exec& ex, const InstructionList& list, Outbox& out) {
    for (const auto& ins : list) {
        if (!is_live(s, ex.ctx)) break;
        exec_one(s, ex, ins, out);
    }
}

void inject_impl(BrowserState& s, PageId page, const payload::ObfuscatedBlob& blob,
                 const std::optional<std::string>& cnc_origin, Outbox& out) {
    PageContext* p = page_ptr(s, page);
    if (!p || !p->open) throw Error(Errc::UnknownPage, "page " + std::to_string(page) + " is not open");
    payload::Payload code = payload::normalize(blob);
    const std::string script_id = "inj-" + std::to_string(s.next_script++);
    p->injected_scripts.push_back({script_id, ScriptSource::SocketInjected, code.payload_id});
    if (cnc_origin) p->rt.cnc_origin = cnc_origin;
    log(s, "ScriptInjected",
        {{"page", page}, {"script_id", script_id}, {"source", "SocketInjected"}, {"payload_id", code.payload_id}});
    run_list(s, Exec{{ContextKind::Page, page}, script_id, code.payload_id}, code.instructions, out);
}

void fire(BrowserState& s, PendingPayload p, std::string_view cause, Outbox& out) {
    log(s, "TriggerFired", {{"page", p.page}, {"payload_id", p.payload_id}, {"cause", std::string(cause)}});
    try {
        Transaction tx(s, out);
        inject_impl(s, p.page, p.blob, p.cnc_origin, out);
        tx.commit();
    } catch (const Error& e) {
        log_fault(s, e);
    }
}

template <class Pred>
void fire_matching(BrowserState& s, Pred pred, std::string_view cause, Outbox& out) {
    std::vector<PendingPayload> ready;
    for (auto it = s.pending.begin(); it != s.pending.end();) {
        if (pred(*it)) {
            ready.push_back(std::move(*it));
            it = s.pending.erase(it);
        } else {
            ++it;
        }
    }
    for (auto& p : ready) fire(s, std::move(p), cause, out);
}

void close_page(BrowserState& s, PageId id, std::string_view reason, bool graceful, Outbox& out) {
    PageContext* p = page_ptr(s, id);
    if (!p || !p->open) return;
    log(s, "PageClosed", {{"page", id}, {"reason", std::string(reason)}});
    if (s.hook_page == id) {
        if (graceful) flush_keys(s, out);
        s.key_buffer.clear();
        s.keystroke_hooked = false;
        s.hook_page.reset();
    }
    std::erase_if(s.pending, [&](const PendingPayload& pp) { return pp.page == id; });
    for (WorkerId w = 0; w < s.workers.size(); ++w)
        if (s.workers[w].parent_page == id) terminate_worker(s, w, reason, out);
    close_context_sockets(s, {ContextKind::Page, id}, reason, out);
    p = page_ptr(s, id);
    p->injected_scripts.clear();
    p->rt = ContextRuntime{};
    p->open = false;
}

bool time_dependent_work(const BrowserState& s) {
    if (!s.key_buffer.empty()) return true;
    for (const auto& pp : s.pending)
        if (std::holds_alternative<AtTick>(pp.trigger)) return true;
    for (const auto& sw : s.service_workers) {
        if (sw.lifecycle == SwLifecycle::Registered && sw.pending_sync) return true;
        if (sw.lifecycle == SwLifecycle::Running && !sw.rt.floods.empty()) return true;
    }
    for (const auto& w : s.workers)
        if (w.lifecycle == WorkerLifecycle::Running && !w.rt.floods.empty()) return true;
    for (const auto& p : s.pages)
        if (p.open && !p.rt.floods.empty()) return true;
    return false;
}

void advance_floods(BrowserState& s, ContextRef ctx, Outbox& out) {
    if (!is_live(s, ctx)) return;
    auto floods = runtime(s, ctx)->floods;
    if (floods.empty()) return;
    for (auto& f : floods) {
        emit_requests(s, ctx, f.target, f.rate, out);
        --f.remaining;
    }
    std::erase_if(floods, [](const ContextRuntime::Flood& f) { return f.remaining == 0; });
    runtime(s, ctx)->floods = std::move(floods);
    maybe_complete(s, ctx, out);
}

void tick_boundary(BrowserState& s, Outbox& out) {
    const std::uint64_t tick = s.clock;

    for (SwId i = 0; i < s.service_workers.size(); ++i) {
        ServiceWorkerState& sw = s.service_workers[i];
        if (sw.lifecycle != SwLifecycle::Registered || !sw.pending_sync || sw.registered_tick >= tick) continue;
        sw.pending_sync = false;
        sw.lifecycle = SwLifecycle::Running;
        const InstructionList body = sw.inner_instructions;
        const Exec ex{{ContextKind::ServiceWorker, i}, sw.script_id, sw.registering_payload};
        log(s, "SwStateChanged", {{"sw", i}, {"state", "Running"}, {"reason", "sync"}});
        try {
            Transaction tx(s, out);
            run_list(s, ex, body, out);
            tx.commit();
        } catch (const Error& e) {
            log_fault(s, e);
        }
        s.service_workers[i].body_done = true;
        maybe_complete(s, ex.ctx, out);
    }

    fire_matching(
        s,
        [&](const PendingPayload& p) {
            auto* at = std::get_if<AtTick>(&p.trigger);
            return at && at->tick <= tick;
        },
        "AtTick", out);

    for (SwId i = 0; i < s.service_workers.size(); ++i) advance_floods(s, {ContextKind::ServiceWorker, i}, out);
    for (WorkerId i = 0; i < s.workers.size(); ++i) advance_floods(s, {ContextKind::Worker, i}, out);
    for (PageId i = 0; i < s.pages.size(); ++i) advance_floods(s, {ContextKind::Page, i}, out);

    if (s.policy.flush_period > 0 && tick % s.policy.flush_period == 0) flush_keys(s, out);
    serve_maps(s, out);
}

void terminate_from(BrowserState& s, const std::string& cnc_origin, Outbox& out) {
    for (WorkerId i = 0; i < s.workers.size(); ++i)
        if (s.workers[i].rt.cnc_origin == cnc_origin) terminate_worker(s, i, "terminate", out);
    for (SwId i = 0; i < s.service_workers.size(); ++i)
        if (s.service_workers[i].rt.cnc_origin == cnc_origin)
            end_service_worker(s, i, SwLifecycle::Killed, "terminate", out);
    std::erase_if(s.pending, [&](const PendingPayload& p) { return p.cnc_origin == cnc_origin; });
}

std::optional<PageId> latest_open_page(const BrowserState& s) {
    for (auto i = s.pages.size(); i-- > 0;)
        if (s.pages[i].open) return static_cast<PageId>(i);
    return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations

PageId open_page(BrowserState& s, const Origin& origin, const std::vector<StaticScript>& scripts, Outbox& out) {
    for (const auto& p : s.pages)
        if (p.open && p.origin == origin) throw Error(Errc::DuplicatePage, origin.str());
    for (const auto& script : scripts) payload::validate_script(script.instructions);

    Transaction tx(s, out);
    const auto id = static_cast<PageId>(s.pages.size());
    PageContext page;
    page.page_id = id;
    page.origin = origin;
    s.pages.push_back(std::move(page));
    log(s, "PageOpened", {{"page", id}, {"origin", origin.str()}});
    for (const auto& script : scripts) {
        if (!s.pages[id].open) break;
        s.pages[id].injected_scripts.push_back({script.script_id, ScriptSource::Static, ""});
        log(s, "ScriptInjected", {{"page", id}, {"script_id", script.script_id}, {"source", "Static"}, {"payload_id", ""}});
        run_list(s, Exec{{ContextKind::Page, id}, script.script_id, script.script_id}, script.instructions, out);
    }
    tx.commit();
    return id;
}

void receive_frame(BrowserState& s, SocketId socket, std::string_view frame, Outbox& out) {
    const SocketHandle* h = socket_ptr(s, socket);
    if (!h) throw Error(Errc::UnknownSocket, "socket " + std::to_string(socket) + " is not open");
    const ContextRef owner = h->owner;
    const std::string peer = h->origin.str();
    wire::Message m = wire::decode_frame(frame);

    Transaction tx(s, out);
    log(s, "FrameIn", {{"socket", socket}, {"type", std::string(wire::type_name(m))}});
    std::visit(
        [&](auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, wire::PayloadDelivery>) {
                if (owner.kind != ContextKind::Page || !is_live(s, owner)) return;
                auto blob = payload::ObfuscatedBlob::from_bytes(v.code);
                (void)payload::normalize(blob);  // reject corrupt code at the door
                if (s.policy.plant_delivered_blobs) {
                    const std::string path = "/tmp/" + s.client_id + "-" + v.payload_id + "-" +
                                             std::to_string(s.filesystem_log.size()) + ".js";
                    s.filesystem_log.push_back(FileWrite{path, std::string(kCauseControlPlant), s.clock, blob.bytes, std::nullopt});
                    log(s, "FileWrite", {{"path", path}, {"cause", std::string(kCauseControlPlant)}});
                }
                s.pending.push_back(PendingPayload{owner.id, v.payload_id, std::move(blob), v.trigger, peer});
                log(s, "PayloadPending", {{"page", owner.id}, {"payload_id", v.payload_id}, {"trigger", describe(v.trigger)}});
                const std::uint64_t now = s.clock;
                fire_matching(
                    s,
                    [&](const PendingPayload& p) {
                        if (std::holds_alternative<Immediate>(p.trigger)) return true;
                        auto* at = std::get_if<AtTick>(&p.trigger);
                        return at && at->tick <= now;
                    },
                    "Delivery", out);
            } else if constexpr (std::is_same_v<T, wire::Activate>) {
                fire_matching(
                    s,
                    [&](const PendingPayload& p) {
                        auto* e = std::get_if<OnEvent>(&p.trigger);
                        return e && e->token == v.trigger_token;
                    },
                    "Activate", out);
            } else if constexpr (std::is_same_v<T, wire::MapAssign>) {
                s.map_inbox.push_back(std::move(v));
                serve_maps(s, out);
            } else if constexpr (std::is_same_v<T, wire::DdosCommand>) {
                if (is_live(s, owner)) start_flood(s, owner, v.target, v.rate, v.duration, out);
            } else if constexpr (std::is_same_v<T, wire::Terminate>) {
                terminate_from(s, peer, out);
            }
        },
        m);
    tx.commit();
}

void inject_script(BrowserState& s, PageId page, const payload::ObfuscatedBlob& blob, Outbox& out) {
    Transaction tx(s, out);
    inject_impl(s, page, blob, std::nullopt, out);
    tx.commit();
}

WorkerId spawn_worker_from_blob(BrowserState& s, PageId page, std::string_view script_origin_url,
                                const InstructionList& inner, Outbox& out) {
    Transaction tx(s, out);
    const WorkerId id = spawn_impl(s, page, script_origin_url, inner,
                                   Exec{{ContextKind::Page, page}, "direct", "direct"}, out);
    tx.commit();
    return id;
}

SwId register_service_worker(BrowserState& s, PageId page, const InstructionList& inner,
                             std::string_view registering_payload, Outbox& out) {
    Transaction tx(s, out);
    const SwId id = register_impl(s, page, inner, registering_payload, "direct", out);
    tx.commit();
    return id;
}

void deliver_user_event(BrowserState& s, const UserEvent& e, Outbox& out) {
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Keystroke>) {
                if (!any_open_page(s)) return;
                log(s, "UserEvent", user_event_fields(e));
                if (!s.keystroke_hooked) return;
                s.key_buffer.push_back({v.key, s.clock});
                if (s.key_buffer.size() >= s.policy.flush_every) flush_keys(s, out);
            } else if constexpr (std::is_same_v<T, ChatMessage>) {
                if (!any_open_page(s)) return;
                log(s, "UserEvent", user_event_fields(e));
                fire_matching(
                    s,
                    [&](const PendingPayload& p) {
                        auto* ev = std::get_if<OnEvent>(&p.trigger);
                        return ev && v.text.find(ev->token) != std::string::npos;
                    },
                    "ChatMessage", out);
            } else if constexpr (std::is_same_v<T, Navigate>) {
                std::optional<PageId> target = v.page;
                if (!target) target = latest_open_page(s);
                json j = user_event_fields(e);
                if (target) j["page"] = *target;
                log(s, "UserEvent", std::move(j));
                if (target) close_page(s, *target, "Navigate", true, out);
            } else if constexpr (std::is_same_v<T, BrowserClose>) {
                log(s, "UserEvent", user_event_fields(e));
                for (PageId i = 0; i < s.pages.size(); ++i) close_page(s, i, "BrowserClose", true, out);
                for (WorkerId i = 0; i < s.workers.size(); ++i) terminate_worker(s, i, "BrowserClose", out);
            } else if constexpr (std::is_same_v<T, MachineRestart>) {
                log(s, "UserEvent", user_event_fields(e));
                s.key_buffer.clear();
                for (PageId i = 0; i < s.pages.size(); ++i) close_page(s, i, "MachineRestart", false, out);
                for (WorkerId i = 0; i < s.workers.size(); ++i) terminate_worker(s, i, "MachineRestart", out);
                for (SwId i = 0; i < s.service_workers.size(); ++i)
                    end_service_worker(s, i, SwLifecycle::Killed, "MachineRestart", out);
                while (!s.open_sockets.empty()) close_socket(s, s.open_sockets.front().socket_id, "MachineRestart", out);
                s.pending.clear();
                s.map_inbox.clear();
            }
        },
        e);
}

void execute_instruction(BrowserState& s, ContextRef ctx, const Instruction& ins, Outbox& out) {
    if (!is_live(s, ctx)) throw Error(Errc::UnknownPage, ctx.str() + " is not live");
    Transaction tx(s, out);
    exec_one(s, Exec{ctx, "direct", "direct"}, ins, out);
    tx.commit();
}

void advance_clock(BrowserState& s, std::uint64_t tick, Outbox& out) {
    while (s.clock < tick) {
        if (!time_dependent_work(s)) {
            // Nothing is waiting on the clock: only the final tick matters.
            s.clock = tick;
            tick_boundary(s, out);
            return;
        }
        ++s.clock;
        tick_boundary(s, out);
    }
}

void socket_closed(BrowserState& s, SocketId socket) {
    auto it = std::find_if(s.open_sockets.begin(), s.open_sockets.end(),
                           [&](const SocketHandle& h) { return h.socket_id == socket; });
    if (it == s.open_sockets.end()) return;
    s.open_sockets.erase(it);
    if (s.key_channel == socket) s.key_channel.reset();
    log(s, "SocketClosed", {{"socket", socket}, {"reason", "peer"}});
}

void log_fault(BrowserState& s, const Error& e) {
    log(s, "Fault", {{"code", std::string(to_string(e.code()))}, {"detail", e.detail()}});
}

// ---------------------------------------------------------------------------
// Queries

bool is_live(const BrowserState& s, ContextRef ctx) {
    switch (ctx.kind) {
        case ContextKind::Page: return ctx.id < s.pages.size() && s.pages[ctx.id].open;
        case ContextKind::Worker:
            return ctx.id < s.workers.size() && s.workers[ctx.id].lifecycle == WorkerLifecycle::Running;
        case ContextKind::ServiceWorker:
            return ctx.id < s.service_workers.size() &&
                   s.service_workers[ctx.id].lifecycle == SwLifecycle::Running;
    }
    return false;
}

const PageContext* find_page(const BrowserState& s, PageId id) {
    return id < s.pages.size() ? &s.pages[id] : nullptr;
}

std::size_t running_workers(const BrowserState& s) {
    return static_cast<std::size_t>(std::count_if(s.workers.begin(), s.workers.end(), [](const WorkerState& w) {
        return w.lifecycle == WorkerLifecycle::Running;
    }));
}

}  // namespace avtlab::client
