#include "avtlab/live_server.hpp"

#include <chrono>
#include <csignal>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "avtlab/detector.hpp"
#include "avtlab/error.hpp"
#include "avtlab/event_log.hpp"
#include "avtlab/simulation.hpp"

namespace avtlab::live {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

class WsSession;

std::string_view mime_type(std::string_view path) {
    auto ends = [&](std::string_view ext) {
        return path.size() >= ext.size() && path.substr(path.size() - ext.size()) == ext;
    };
    if (ends(".html")) return "text/html; charset=utf-8";
    if (ends(".js")) return "application/javascript";
    if (ends(".css")) return "text/css";
    if (ends(".json")) return "application/json";
    return "application/octet-stream";
}

// All coordinator state. Only ever touched from the io_context thread.
struct Hub {
    explicit Hub(LiveOptions o);

    void start();
    void shutdown();
    cnc::ConnId attach(const std::shared_ptr<WsSession>& s);
    void detach(cnc::ConnId conn);
    void on_text(cnc::ConnId conn, const std::string& text);
    http::response<http::string_body> serve_static(const http::request<http::string_body>& req) const;
    json report() const;

    LiveOptions opts;
    net::io_context ioc{1};
    tcp::acceptor acceptor{ioc};
    net::steady_timer ticker{ioc};
    net::steady_timer force_close{ioc};
    net::signal_set signals{ioc};
    cnc::Coordinator cnc;
    std::vector<scenario::TimedAction> actions;
    std::size_t next_action = 0;
    std::uint64_t tick = 0;
    std::uint16_t bound_port = 0;
    cnc::ConnId next_conn = 1;
    std::map<cnc::ConnId, std::weak_ptr<WsSession>> sessions;
    std::map<std::string, std::vector<LogRecord>> behavior;
    std::vector<std::string> stream_errors;
    bool stopping = false;

private:
    void do_accept();
    void schedule_tick();
    void on_tick();
    void dispatch(const cnc::Frames& frames);
    void ingest(const LogRecord& r);
};

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

    void accept(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.text(true);
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

    void send(std::string text) {
        if (closing_) return;
        queue_.push_back(std::move(text));
        if (queue_.size() == 1) do_write();
    }

    void close() {
        if (closing_) return;
        closing_ = true;
        if (queue_.empty()) do_close();
    }

    void force_close() {
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().close(ec);
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        if (hub_.stopping) {
            force_close();
            return;
        }
        conn_ = hub_.attach(shared_from_this());
        do_read();
    }

    void do_read() { ws_.async_read(buf_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            hub_.detach(conn_);
            return;
        }
        std::string text = beast::buffers_to_string(buf_.data());
        buf_.consume(buf_.size());
        hub_.on_text(conn_, text);
        do_read();
    }

    void do_write() {
        ws_.async_write(net::buffer(queue_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        if (ec) return;
        queue_.pop_front();
        if (!queue_.empty()) do_write();
        else if (closing_) do_close();
    }

    void do_close() {
        ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buf_;
    Hub& hub_;
    cnc::ConnId conn_ = 0;
    std::deque<std::string> queue_;
    bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, Hub& hub) : stream_(std::move(socket)), hub_(hub) {}

    void start() {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

private:
    void on_read(beast::error_code ec, std::size_t) {
        if (ec) return;
        if (websocket::is_upgrade(req_)) {
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), hub_)->accept(std::move(req_));
            return;
        }
        auto res = std::make_shared<http::response<http::string_body>>(hub_.serve_static(req_));
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
    Hub& hub_;
};

Hub::Hub(LiveOptions o) : opts(std::move(o)), cnc(scenario::cnc_config(opts.scenario)) {
    actions = opts.scenario.cnc_script;
    std::stable_sort(actions.begin(), actions.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
    if (opts.tick_ms == 0) throw Error(Errc::ConfigInvalid, "tick_ms must be >= 1");
    beast::error_code ec;
    const auto address = net::ip::make_address(opts.host, ec);
    if (ec) throw Error(Errc::Io, "bad host '" + opts.host + "': " + ec.message());
    const tcp::endpoint ep(address, opts.port);
    acceptor.open(ep.protocol(), ec);
    if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor.bind(ep, ec);
    if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw Error(Errc::Io, "cannot listen on " + opts.host + ":" + std::to_string(opts.port) + ": " + ec.message());
    bound_port = acceptor.local_endpoint().port();
}

void Hub::start() {
    do_accept();
    schedule_tick();
    if (opts.handle_signals) {
        signals.add(SIGINT);
        signals.add(SIGTERM);
        signals.async_wait([this](beast::error_code ec, int) {
            if (!ec) shutdown();
        });
    }
}

void Hub::do_accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
        if (ec) return;  // closed during shutdown
        std::make_shared<HttpSession>(std::move(socket), *this)->start();
        do_accept();
    });
}

void Hub::schedule_tick() {
    ticker.expires_after(std::chrono::milliseconds(opts.tick_ms));
    ticker.async_wait([this](beast::error_code ec) {
        if (!ec) on_tick();
    });
}

void Hub::on_tick() {
    if (stopping) return;
    ++tick;
    while (next_action < actions.size() && actions[next_action].tick <= tick) {
        const auto& a = actions[next_action++].action;
        if (auto* act = std::get_if<scenario::ActivateAction>(&a)) dispatch(cnc.activate(act->token, tick));
        else dispatch(cnc.terminate_all(tick));
    }
    dispatch(cnc.on_tick(tick));
    if (opts.max_ticks && tick >= *opts.max_ticks) {
        shutdown();
        return;
    }
    schedule_tick();
}

void Hub::dispatch(const cnc::Frames& frames) {
    for (const auto& f : frames) {
        auto it = sessions.find(f.conn);
        if (it == sessions.end()) continue;
        if (auto s = it->second.lock()) s->send(wire::encode_frame(f.message));
    }
}

cnc::ConnId Hub::attach(const std::shared_ptr<WsSession>& s) {
    const cnc::ConnId id = next_conn++;
    sessions[id] = s;
    cnc.on_connect(id, tick);
    return id;
}

void Hub::detach(cnc::ConnId conn) {
    if (sessions.erase(conn)) cnc.on_disconnect(conn, tick);
}

void Hub::ingest(const LogRecord& r) { behavior[r.client].push_back(r); }

void Hub::on_text(cnc::ConnId conn, const std::string& text) {
    json j = json::parse(text, nullptr, false);
    // FrameIn/FrameOut records carry a type field too, so kind+seq decides.
    const bool record = !j.is_discarded() && j.is_object() && j.contains("kind") && j.contains("seq");
    const bool ndjson = j.is_discarded() && text.find('\n') != std::string::npos && text.find("\"kind\"") != std::string::npos;
    if (!record && !ndjson) {
        dispatch(cnc.on_frame(conn, text, tick));
        return;
    }
    try {
        if (record) ingest(LogRecord::from_json(j));
        else
            for (const auto& r : parse_ndjson(text)) ingest(r);
    } catch (const Error& e) {
        stream_errors.push_back(e.what());
    }
}

http::response<http::string_body> Hub::serve_static(const http::request<http::string_body>& req) const {
    auto make = [&](http::status st, std::string body, std::string_view type) {
        http::response<http::string_body> res{st, req.version()};
        res.set(http::field::server, "avtlab");
        res.set(http::field::content_type, std::string(type));
        res.keep_alive(false);
        res.body() = std::move(body);
        res.prepare_payload();
        return res;
    };
    if (req.method() != http::verb::get) return make(http::status::method_not_allowed, "GET only\n", "text/plain");
    std::string target(req.target());
    target = target.substr(0, target.find('?'));
    if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos)
        return make(http::status::bad_request, "bad path\n", "text/plain");
    if (!opts.static_dir) return make(http::status::not_found, "no static directory\n", "text/plain");
    if (target.back() == '/') target += "index.html";
    std::ifstream in(*opts.static_dir + target, std::ios::binary);
    if (!in) return make(http::status::not_found, "not found\n", "text/plain");
    std::ostringstream ss;
    ss << in.rdbuf();
    return make(http::status::ok, ss.str(), mime_type(target));
}

void Hub::shutdown() {
    if (stopping) return;
    stopping = true;
    beast::error_code ec;
    acceptor.close(ec);
    ticker.cancel();
    signals.cancel(ec);
    for (auto& [id, weak] : sessions)
        if (auto s = weak.lock()) s->close();
    // Peers that do not answer the close handshake are cut off.
    force_close.expires_after(std::chrono::milliseconds(500));
    force_close.async_wait([this](beast::error_code) {
        for (auto& [id, weak] : sessions)
            if (auto s = weak.lock()) s->force_close();
    });
}

json Hub::report() const {
    json logs = json::object();
    std::vector<LogRecord> all;
    for (const auto& [client, records] : behavior) {
        json arr = json::array();
        for (const auto& r : records) arr.push_back(r.to_json());
        logs[client] = arr;
        all.insert(all.end(), records.begin(), records.end());
    }
    json verdict;
    try {
        verdict = detect::behavior_monitor(all, detect::DetectorConfig{}).to_json();
    } catch (const Error& e) {
        verdict = {{"error", e.what()}};
    }
    return {{"mode", "live"},
            {"scenario", opts.scenario.name},
            {"ticks", tick},
            {"tick_ms", opts.tick_ms},
            {"cnc", sim::cnc_summary(cnc)},
            {"behavior_logs", logs},
            {"behavior_verdict", verdict},
            {"stream_errors", stream_errors}};
}

}  // namespace

struct LiveServer::Impl : Hub {
    using Hub::Hub;
};

LiveServer::LiveServer(LiveOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

LiveServer::~LiveServer() = default;

std::uint16_t LiveServer::port() const { return impl_->bound_port; }

void LiveServer::run() {
    impl_->start();
    impl_->ioc.run();
}

void LiveServer::stop() {
    net::post(impl_->ioc, [impl = impl_.get()] { impl->shutdown(); });
}

json LiveServer::report() const { return impl_->report(); }

}  // namespace avtlab::live
