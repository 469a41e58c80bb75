#include <doctest.h>

#include "avtlab/client_sim.hpp"
#include "avtlab/error.hpp"
#include "avtlab/payload.hpp"
#include "avtlab/wire.hpp"
#include "gen.hpp"

using namespace avtlab;
using namespace avtlab::client;
using namespace avtlab::payload;

namespace {

const std::string kCnc(kDefaultCncUrl);
const Origin kCncPage = Origin::parse("http://cnc.avtlab.example:8080");

std::size_t count_kind(const BrowserState& s, std::string_view kind) {
    return std::count_if(s.event_log.begin(), s.event_log.end(), [&](const LogRecord& r) { return r.kind == kind; });
}

std::size_t count_frames(const Outbox& out, std::string_view type) {
    return std::count_if(out.begin(), out.end(), [&](const Outbound& o) {
        return o.kind == Outbound::Kind::Frame && o.message && wire::type_name(*o.message) == type;
    });
}

std::vector<std::string> kinds(const BrowserState& s) {
    std::vector<std::string> k;
    for (const auto& r : s.event_log) k.push_back(r.kind);
    return k;
}

std::size_t index_of(const BrowserState& s, std::string_view kind) {
    for (std::size_t i = 0; i < s.event_log.size(); ++i)
        if (s.event_log[i].kind == kind) return i;
    return s.event_log.size();
}

// A victim page carrying the socket-opening stub; socket 0 leads to the C&C.
struct Victim {
    BrowserState s = make_browser("c0", VictimData{{{"sid", "42"}}, {{"k", "v"}}});
    Outbox out;
    PageId page = 0;

    Victim() { page = open_page(s, kCncPage, {{"index.js", {{OpenSocket{kCnc}}}}}, out); }

    void deliver(const Payload& p, std::uint64_t seed = 1) {
        const auto blob = obfuscate(p, seed);
        receive_frame(s, 0, wire::encode_frame(wire::PayloadDelivery{p.payload_id, blob.bytes, p.trigger}), out);
    }
    void frame(const wire::Message& m) { receive_frame(s, 0, wire::encode_frame(m), out); }
    void event(const UserEvent& e) { deliver_user_event(s, e, out); }
    void tick(std::uint64_t t) { advance_clock(s, t, out); }
};

Payload with_trigger(Payload p, TriggerSpec t) {
    p.trigger = std::move(t);
    return p;
}

}  // namespace

TEST_CASE("origins") {
    const auto o = Origin::parse("HTTPS://Chat.Example/path");
    CHECK(o.str() == "https://chat.example:443");
    CHECK(Origin::parse("ws://h").port == 80);
    CHECK(same_origin(Origin::parse("wss://a.example"), Origin::parse("https://a.example:443")));
    CHECK_FALSE(same_origin(Origin::parse("ws://a.example"), Origin::parse("https://a.example")));
    CHECK_THROWS_AS(Origin::parse("no-scheme"), Error);
    CHECK_THROWS_AS(Origin::parse("ftp://x"), Error);
    CHECK_THROWS_AS(Origin::parse("http://x:99999"), Error);
    CHECK_THROWS_AS(Origin::parse("http://:80"), Error);
}

TEST_CASE("open_page") {
    auto s = make_browser("c");
    Outbox out;
    open_page(s, Origin::parse("http://victim:80"), {}, out);
    CHECK(s.pages.size() == 1);
    CHECK(s.pages[0].injected_scripts.empty());
    CHECK_THROWS_AS(open_page(s, Origin::parse("http://victim:80"), {}, out), Error);

    auto t = make_browser("c");
    open_page(t, Origin::parse("http://victim:80"), {{"a.js", {{ReadCookies{}}}}, {"b.js", {{ReadWebStorage{}}}}}, out);
    CHECK(t.pages[0].injected_scripts.size() == 2);
    for (const auto& sc : t.pages[0].injected_scripts) CHECK(sc.source == ScriptSource::Static);
    CHECK(count_kind(t, "ScriptInjected") == 2);
}

TEST_CASE("duplicate page leaves state untouched") {
    Victim v;
    const auto before = v.s.event_log.size();
    try {
        open_page(v.s, kCncPage, {}, v.out);
        FAIL("expected DuplicatePage");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DuplicatePage);
    }
    CHECK(v.s.event_log.size() == before);
    CHECK(v.s.pages.size() == 1);
}

TEST_CASE("Immediate delivery injects in the same tick") {
    Victim v;
    v.tick(3);
    v.deliver(with_trigger(*builtin_payload("keycookielog"), Immediate{}));
    const auto& scripts = v.s.pages[0].injected_scripts;
    REQUIRE(scripts.size() == 2);
    CHECK(scripts[1].source == ScriptSource::SocketInjected);
    CHECK(v.s.keystroke_hooked);
    CHECK(v.s.filesystem_log.empty());
    CHECK(v.s.event_log[index_of(v.s, "TriggerFired")].tick == 3);
    CHECK(count_frames(v.out, "ExfilStorage") == 1);
}

TEST_CASE("OnEvent waits for its token") {
    Victim v;
    v.deliver(*builtin_payload("keycookielog"));  // OnEvent tr1gger
    v.event(ChatMessage{"hello everyone"});
    CHECK(v.s.pages[0].injected_scripts.size() == 1);
    CHECK_FALSE(v.s.keystroke_hooked);
    v.tick(5);
    v.frame(wire::Activate{"tr1gger"});
    CHECK(v.s.pages[0].injected_scripts.size() == 2);
    const auto d = index_of(v.s, "PayloadPending");
    const auto a = index_of(v.s, "FrameIn");
    const auto i = v.s.event_log.size() - 1 - (std::find_if(v.s.event_log.rbegin(), v.s.event_log.rend(), [](const LogRecord& r) {
                                                  return r.kind == "ScriptInjected";
                                              }) - v.s.event_log.rbegin());
    CHECK(d < i);
    CHECK(a < i);
    CHECK(v.s.event_log[i].tick == 5);
    CHECK(v.s.event_log[i].fields["source"] == "SocketInjected");
}

TEST_CASE("chat token fires OnEvent") {
    Victim v;
    v.deliver(*builtin_payload("keycookielog"));
    v.event(ChatMessage{"ok tr1gger now"});
    CHECK(v.s.keystroke_hooked);
}

TEST_CASE("AtTick fires at its tick") {
    Victim v;
    v.deliver(with_trigger(*builtin_payload("keycookielog"), AtTick{7}));
    v.tick(6);
    CHECK_FALSE(v.s.keystroke_hooked);
    v.tick(7);
    CHECK(v.s.keystroke_hooked);
    CHECK(v.s.event_log[index_of(v.s, "TriggerFired")].tick == 7);
}

TEST_CASE("corrupt blob leaves state unchanged") {
    Victim v;
    const auto before = v.s.event_log;
    const auto blob = obfuscate(*builtin_payload("keycookielog"), 1);
    CHECK_THROWS_AS(inject_script(v.s, v.page, ObfuscatedBlob{blob.bytes.substr(0, 10), 1}, v.out), Error);
    CHECK(v.s.event_log == before);
    CHECK(v.s.pages[0].injected_scripts.size() == 1);
}

TEST_CASE("corrupt delivery frame is rejected atomically") {
    Victim v;
    const auto before = v.s.event_log.size();
    CHECK_THROWS_AS(v.frame(wire::PayloadDelivery{"x", "not a blob", Immediate{}}), Error);
    CHECK(v.s.event_log.size() == before);
    CHECK(v.s.pending.empty());
}

TEST_CASE("unknown socket") {
    Victim v;
    try {
        receive_frame(v.s, 99, wire::encode_frame(wire::Terminate{}), v.out);
        FAIL("expected UnknownSocket");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnknownSocket);
    }
}

TEST_CASE("service worker registration writes exactly one file") {
    Victim v;
    v.deliver(*builtin_payload("map_worker"));
    REQUIRE(v.s.service_workers.size() == 1);
    REQUIRE(v.s.filesystem_log.size() == 1);
    CHECK(v.s.filesystem_log[0].cause == kCauseServiceWorker);
    CHECK(v.s.filesystem_log[0].sw == 0u);
    CHECK(v.s.service_workers[0].lifecycle == SwLifecycle::Registered);
    v.tick(1);
    CHECK(v.s.service_workers[0].lifecycle == SwLifecycle::Running);
}

TEST_CASE("service worker survives navigation and browser close, not restart") {
    Victim v;
    v.deliver(*builtin_payload("map_worker"));
    v.event(Navigate{});
    v.tick(2);
    CHECK(v.s.service_workers[0].lifecycle == SwLifecycle::Running);
    v.event(BrowserClose{});
    v.tick(3);
    CHECK(v.s.service_workers[0].lifecycle == SwLifecycle::Running);
    v.event(MachineRestart{});
    CHECK(v.s.service_workers[0].lifecycle == SwLifecycle::Killed);
    CHECK(v.s.open_sockets.empty());
}

TEST_CASE("duplicate registration from the same payload") {
    Victim v;
    const InstructionList inner = {{ComputeMap{FnId::WordCount}}};
    register_service_worker(v.s, v.page, inner, "p", v.out);
    try {
        register_service_worker(v.s, v.page, inner, "p", v.out);
        FAIL("expected DuplicateRegistration");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DuplicateRegistration);
    }
    CHECK(v.s.filesystem_log.size() == 1);
    CHECK_NOTHROW(register_service_worker(v.s, v.page, inner, "q", v.out));
}

TEST_CASE("blob worker from another origin") {
    Victim v;
    const InstructionList inner = {{ComputeMap{FnId::WordCount}}};
    spawn_worker_from_blob(v.s, v.page, kDefaultCdnScriptUrl, inner, v.out);
    CHECK(v.s.workers.at(0).lifecycle == WorkerLifecycle::Running);
    CHECK(count_kind(v.s, "CrossOriginImport") == 1);
    spawn_worker_from_blob(v.s, v.page, "http://cnc.avtlab.example:8080/w.js", inner, v.out);
    CHECK(count_kind(v.s, "CrossOriginImport") == 1);
    v.event(BrowserClose{});
    CHECK(v.s.workers[0].lifecycle == WorkerLifecycle::Terminated);
    CHECK(v.s.workers[1].lifecycle == WorkerLifecycle::Terminated);
}

TEST_CASE("workers die with their page; finished workers terminate") {
    Victim v;
    spawn_worker_from_blob(v.s, v.page, kDefaultCdnScriptUrl, {{ComputeMap{FnId::WordCount}}}, v.out);
    spawn_worker_from_blob(v.s, v.page, kDefaultCdnScriptUrl, {{OpenSocket{kCnc}}}, v.out);
    CHECK(v.s.workers[1].lifecycle == WorkerLifecycle::Terminated);  // body exhausted
    CHECK(v.s.workers[0].lifecycle == WorkerLifecycle::Running);     // awaits map tasks
    v.event(Navigate{});
    CHECK(v.s.workers[0].lifecycle == WorkerLifecycle::Terminated);
}

TEST_CASE("keystroke flush by count") {
    Victim v;
    v.s.policy.flush_every = 3;
    v.s.policy.flush_period = 1000;
    v.deliver(with_trigger(*builtin_payload("keycookielog"), Immediate{}));
    v.out.clear();
    for (const char* k : {"a", "b", "c"}) v.event(Keystroke{k});
    REQUIRE(count_frames(v.out, "ExfilKeystrokes") == 1);
    for (const auto& o : v.out)
        if (o.message && std::holds_alternative<wire::ExfilKeystrokes>(*o.message))
            CHECK(std::get<wire::ExfilKeystrokes>(*o.message).events.size() == 3);
}

TEST_CASE("keystroke flush on period boundary and not before the hook") {
    Victim v;
    v.event(Keystroke{"early"});
    v.deliver(with_trigger(*builtin_payload("keycookielog"), Immediate{}));
    v.out.clear();
    v.tick(1);
    v.event(Keystroke{"x"});
    v.tick(7);
    CHECK(count_frames(v.out, "ExfilKeystrokes") == 0);
    v.tick(8);
    CHECK(count_frames(v.out, "ExfilKeystrokes") == 1);
}

TEST_CASE("HttpFlood rate x duration") {
    Victim v;
    execute_instruction(v.s, {ContextKind::Page, 0}, {HttpFlood{"http://t.example:80/", 5, 2}}, v.out);
    v.tick(10);
    const auto n = std::count_if(v.out.begin(), v.out.end(), [](const Outbound& o) { return o.kind == Outbound::Kind::HttpRequest; });
    CHECK(n == 10);
    CHECK(count_kind(v.s, "OutboundRequest") == 10);
    std::set<std::uint64_t> ticks;
    for (const auto& r : v.s.event_log)
        if (r.kind == "OutboundRequest") ticks.insert(r.tick);
    CHECK(ticks.size() == 2);
}

TEST_CASE("ComputeMap answers MapAssign") {
    Victim v;
    spawn_worker_from_blob(v.s, v.page, kCnc,
                           {{OpenSocket{kCnc}}, {ComputeMap{FnId::WordCount}}, {Send{kCnc, SendWhat::MapResult}}}, v.out);
    v.out.clear();
    v.frame(wire::MapAssign{3, FnId::WordCount, "a b a"});
    bool found = false;
    for (const auto& o : v.out)
        if (o.message)
            if (auto* r = std::get_if<wire::MapResult>(&*o.message)) {
                found = true;
                CHECK(r->task_id == 3);
                CHECK(r->value == CountMap{{"a", 2}, {"b", 1}});
            }
    CHECK(found);
}

TEST_CASE("Send without socket") {
    Victim v;
    try {
        execute_instruction(v.s, {ContextKind::Page, 0}, {Send{"ws://elsewhere.example:80/", SendWhat::Storage}}, v.out);
        FAIL("expected SendWithoutSocket");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SendWithoutSocket);
    }
}

TEST_CASE("sockets ignore the same-origin policy") {
    Victim v;
    execute_instruction(v.s, {ContextKind::Page, 0}, {OpenSocket{"wss://far.example:9443/x"}}, v.out);
    CHECK(v.s.open_sockets.size() == 2);
    CHECK(v.s.event_log.back().kind == "FrameOut");
}

TEST_CASE("Terminate kills the C&C's workers and service workers") {
    Victim v;
    v.deliver(*builtin_payload("map_worker"));
    v.deliver(*builtin_payload("blob_worker"));
    v.tick(1);
    REQUIRE(v.s.workers.size() == 1);
    v.frame(wire::Terminate{});
    CHECK(v.s.workers[0].lifecycle == WorkerLifecycle::Terminated);
    CHECK(v.s.service_workers[0].lifecycle == SwLifecycle::Killed);
}

TEST_CASE("event log is totally ordered") {
    Rng r(8);
    for (int trial = 0; trial < 100; ++trial) {
        Victim v;
        v.deliver(gen::payload(r), r.next());
        for (int i = 0; i < 20; ++i) {
            v.tick(v.s.clock + r.below(3));
            switch (r.below(4)) {
                case 0: v.event(Keystroke{"k"}); break;
                case 1: v.event(ChatMessage{gen::word(r)}); break;
                case 2: v.frame(wire::Activate{gen::word(r)}); break;
                default: break;
            }
        }
        for (std::size_t i = 1; i < v.s.event_log.size(); ++i) {
            const auto& a = v.s.event_log[i - 1];
            const auto& b = v.s.event_log[i];
            CHECK((a.tick < b.tick || (a.tick == b.tick && a.seq < b.seq)));
        }
    }
}

TEST_CASE("identical inputs give identical logs") {
    auto run = [] {
        Victim v;
        v.deliver(*builtin_payload("keycookielog"), 5);
        v.event(ChatMessage{"tr1gger"});
        v.event(Keystroke{"z"});
        v.tick(9);
        return kinds(v.s);
    };
    CHECK(run() == run());
}
