#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <set>
#include <thread>

#include "avtlab/error.hpp"
#include "avtlab/live_server.hpp"
#include "avtlab/wire.hpp"

using namespace avtlab;
using nlohmann::json;
namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

const std::string kSrc = AVTLAB_SOURCE_DIR;

live::LiveOptions options(const std::string& scenario_file) {
    live::LiveOptions o;
    o.port = 0;
    o.tick_ms = 5;
    o.handle_signals = false;
    o.static_dir = kSrc + "/web";
    o.scenario = scenario::load_scenario(kSrc + "/scenarios/" + scenario_file);
    return o;
}

// Server on a background thread; stop() and join on destruction.
struct Running {
    explicit Running(live::LiveOptions o) : server(std::move(o)), thread([this] { server.run(); }) {}
    ~Running() { finish(); }
    json finish() {
        if (thread.joinable()) {
            server.stop();
            thread.join();
        }
        return server.report();
    }
    live::LiveServer server;
    std::thread thread;
};

struct WsClient {
    net::io_context ioc;
    websocket::stream<tcp::socket> ws{ioc};
    explicit WsClient(std::uint16_t port) {
        tcp::resolver resolver(ioc);
        net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws.handshake("127.0.0.1", "/");
        ws.text(true);
    }
    void send(const std::string& s) { ws.write(net::buffer(s)); }
    std::string read() {
        beast::flat_buffer b;
        ws.read(b);
        return beast::buffers_to_string(b.data());
    }
};

http::response<http::string_body> get(std::uint16_t port, const std::string& target) {
    net::io_context ioc;
    tcp::socket s(ioc);
    tcp::resolver resolver(ioc);
    net::connect(s, resolver.resolve("127.0.0.1", std::to_string(port)));
    http::request<http::string_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "127.0.0.1");
    http::write(s, req);
    beast::flat_buffer b;
    http::response<http::string_body> res;
    http::read(s, b, res);
    return res;
}

std::string record(std::uint64_t tick, std::uint64_t seq, const std::string& kind, json fields) {
    fields["tick"] = tick;
    fields["seq"] = seq;
    fields["client"] = "b1";
    fields["kind"] = kind;
    return fields.dump();
}

}  // namespace

TEST_CASE("port 0 binds a free port; max_ticks stops the server") {
    auto o = options("fig1_malicious_server.json");
    o.max_ticks = 5;
    live::LiveServer s(o);
    CHECK(s.port() != 0);
    s.run();
    const auto rep = s.report();
    CHECK(rep["mode"] == "live");
    CHECK(rep["ticks"] == 5);
}

TEST_CASE("binding a busy port is an Io error") {
    Running a(options("fig1_malicious_server.json"));
    auto o = options("fig1_malicious_server.json");
    o.port = a.server.port();
    try {
        live::LiveServer b(o);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::Io);
    }
}

TEST_CASE("register over a real socket and receive the payload") {
    Running r(options("fig1_malicious_server.json"));
    WsClient c(r.server.port());
    c.send(wire::encode_frame(wire::Register{"b1"}));
    const auto msg = wire::decode_frame(c.read());
    const auto* d = std::get_if<wire::PayloadDelivery>(&msg);
    REQUIRE(d);
    CHECK(d->payload_id == "keycookielog");
    c.send(wire::encode_frame(wire::ExfilKeystrokes{"b1", {{"x", 1}}}));

    // Garbage is logged by the coordinator and the socket stays usable.
    c.send("{\"type\":\"Teleport\"}");
    c.send(wire::encode_frame(wire::ExfilKeystrokes{"b1", {{"y", 2}}}));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto rep = r.finish();
    CHECK(rep["cnc"]["deliveries"].size() == 1);
    CHECK(rep["cnc"]["exfil_store"]["b1"]["keystrokes"].size() == 2);
    bool decode_error = false;
    for (const auto& e : rep["cnc"]["log"]) decode_error |= e["event"] == "DecodeError";
    CHECK(decode_error);
}

TEST_CASE("behavior records over the socket reach the monitor") {
    Running r(options("fig1_malicious_server.json"));
    WsClient c(r.server.port());
    c.send(record(3, 0, "FrameIn", {{"socket", 0}, {"type", "PayloadDelivery"}}));
    // Two records in one NDJSON frame.
    c.send(record(4, 1, "ScriptInjected", {{"page", 0}, {"script_id", "inj-0"}, {"source", "SocketInjected"}}) + "\n" +
           record(5, 2, "KeystrokeHookSet", {{"page", 0}}) + "\n");
    c.send(record(6, 3, "FrameOut", {{"socket", 0}, {"type", "ExfilKeystrokes"}}));
    c.send(record(7, 4, "Teleport", json::object()));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto rep = r.finish();
    CHECK(rep["behavior_logs"]["b1"].size() == 5);
    CHECK(rep["stream_errors"].empty());
    // The unknown kind is rejected by the monitor as a whole.
    CHECK(rep["behavior_verdict"].contains("error"));
}

TEST_CASE("behavior verdict over a clean stream") {
    Running r(options("fig1_malicious_server.json"));
    WsClient c(r.server.port());
    c.send(record(3, 0, "FrameIn", {{"socket", 0}, {"type", "PayloadDelivery"}}));
    c.send(record(4, 1, "ScriptInjected", {{"page", 0}, {"script_id", "inj-0"}, {"source", "SocketInjected"}}) + "\n" +
           record(5, 2, "KeystrokeHookSet", {{"page", 0}}) + "\n");
    c.send(record(6, 3, "FrameOut", {{"socket", 0}, {"type", "ExfilKeystrokes"}}));
    c.send("{\"kind\":\"x\",\"seq\":1}\n{broken\n");
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto rep = r.finish();
    CHECK(rep["behavior_logs"]["b1"].size() == 4);
    CHECK(rep["stream_errors"].size() == 1);
    CHECK(rep["behavior_verdict"]["detected"] == true);
    std::set<std::string> rules;
    for (const auto& f : rep["behavior_verdict"]["flags"]) rules.insert(f["rule_id"]);
    CHECK(rules == std::set<std::string>{"R1", "R4"});
}

TEST_CASE("static pages") {
    Running r(options("benign_chat.json"));
    const auto port = r.server.port();
    const auto index = get(port, "/");
    CHECK(index.result() == http::status::ok);
    CHECK(index[http::field::content_type].starts_with("text/html"));
    CHECK(index.body().find("WebSocket") != std::string::npos);
    CHECK(get(port, "/index.html?x=1").result() == http::status::ok);
    CHECK(get(port, "/nope.js").result() == http::status::not_found);
    CHECK(get(port, "/../CMakeLists.txt").result() == http::status::bad_request);
}

TEST_CASE("scripted activation reaches a live client") {
    auto o = options("fig1_malicious_server.json");
    Running r(o);
    WsClient c(r.server.port());
    c.send(wire::encode_frame(wire::Register{"b1"}));
    CHECK(std::holds_alternative<wire::PayloadDelivery>(wire::decode_frame(c.read())));
    // fig1 activates at tick 10; 5 ms ticks.
    const auto msg = wire::decode_frame(c.read());
    const auto* a = std::get_if<wire::Activate>(&msg);
    REQUIRE(a);
    CHECK(a->trigger_token == "tr1gger");
}
