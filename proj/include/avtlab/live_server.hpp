/**
 * @file live_server.hpp
 * @brief Real WebSocket endpoint for the coordinator, plus static files.
 *
 * One io_context thread owns all coordinator state, so every connection
 * handler runs serialized. Text frames that decode as wire messages go to
 * the coordinator; frames that carry both `kind` and `seq` are
 * behavior-log records (one or more NDJSON lines) reported by the browser.
 * Plain HTTP GETs are answered from the static directory.
 */
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "avtlab/scenario.hpp"

namespace avtlab::live {

struct LiveOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;  // 0 picks a free port
    std::uint64_t tick_ms = 100;
    std::optional<std::string> static_dir;
    scenario::ScenarioConfig scenario;
    std::optional<std::uint64_t> max_ticks;  // stop on its own after this many ticks
    bool handle_signals = true;              // SIGINT/SIGTERM trigger an orderly stop
};

class LiveServer {
public:
    /// Binds immediately. Throws Error(Io) if the address is unusable.
    explicit LiveServer(LiveOptions opts);
    ~LiveServer();
    LiveServer(const LiveServer&) = delete;
    LiveServer& operator=(const LiveServer&) = delete;

    std::uint16_t port() const;
    /// Serves until stop(), a signal or max_ticks.
    void run();
    /// Safe to call from any thread.
    void stop();
    /// Coordinator state, received behavior logs and their verdict. Call
    /// after run() returned.
    nlohmann::json report() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace avtlab::live
