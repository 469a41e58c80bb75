#include "avtlab/cnc_sim.hpp"

#include <algorithm>

#include "avtlab/error.hpp"
#include "avtlab/rng.hpp"

namespace avtlab::cnc {

using nlohmann::json;

std::uint64_t delivery_seed(std::uint64_t obfuscation_seed, std::string_view client, std::size_t index) {
    return derive_seed(derive_seed(obfuscation_seed, client), index);
}

Coordinator::Coordinator(CncConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.latency_ticks == 0) throw Error(Errc::ConfigInvalid, "latency_ticks must be >= 1");
}

void Coordinator::note(std::uint64_t tick, std::string event, json fields) {
    json rec = std::move(fields);
    rec["tick"] = tick;
    rec["event"] = std::move(event);
    log_.push_back(std::move(rec));
}

void Coordinator::on_connect(ConnId conn, std::uint64_t tick) {
    conns_[conn] = std::nullopt;
    note(tick, "Connected", {{"conn", conn}});
}

void Coordinator::on_disconnect(ConnId conn, std::uint64_t tick) {
    auto it = conns_.find(conn);
    if (it == conns_.end()) return;
    json f = {{"conn", conn}};
    if (it->second) f["client"] = *it->second;
    conns_.erase(it);
    note(tick, "Disconnected", std::move(f));
}

std::vector<std::string> Coordinator::connected_clients() const {
    std::vector<std::string> out;
    for (const auto& c : register_order_)
        if (route(c)) out.push_back(c);
    return out;
}

std::optional<ConnId> Coordinator::route(std::string_view client) const {
    for (const auto& [id, who] : conns_)
        if (who && *who == client) return id;
    return std::nullopt;
}

bool Coordinator::idle() const {
    const bool job_done = !cfg_.job || mr_.completed_tick.has_value();
    const bool ddos_done = !cfg_.ddos || ddos_issued_;
    return job_done && ddos_done;
}

Frames Coordinator::deliver(ConnId conn, const std::string& client, std::uint64_t tick) {
    Frames out;
    if (cfg_.payloads.empty() || !delivered_to_.insert(client).second) return out;
    for (std::size_t i = 0; i < cfg_.payloads.size(); ++i) {
        const auto& p = cfg_.payloads[i];
        const std::uint64_t seed = delivery_seed(cfg_.obfuscation_seed, client, i);
        auto blob = payload::obfuscate(p, seed);
        const std::string sig = payload::to_hex(payload::signature(blob));
        deliveries_.push_back(Delivery{client, p.payload_id, seed, sig, blob.bytes, tick});
        note(tick, "Delivered", {{"client", client}, {"payload_id", p.payload_id}, {"signature", sig}});
        out.push_back({conn, wire::PayloadDelivery{p.payload_id, std::move(blob.bytes), p.trigger}});
    }
    return out;
}

void Coordinator::on_result(const wire::MapResult& r, std::uint64_t tick) {
    auto it = mr_.pending.find(r.task_id);
    if (it == mr_.pending.end()) {
        note(tick, "MapResultIgnored", {{"task_id", r.task_id}, {"client", r.client_id}});
        return;
    }
    mr_.pending.erase(it);
    mr_.results.emplace(r.task_id, r);
    note(tick, "MapResult", {{"task_id", r.task_id}, {"client", r.client_id}});
}

Frames Coordinator::on_frame(ConnId conn, std::string_view frame, std::uint64_t tick) {
    Frames out;
    auto conn_it = conns_.find(conn);
    if (conn_it == conns_.end()) {
        note(tick, "FrameOnClosedConnection", {{"conn", conn}});
        return out;
    }
    wire::Message m;
    try {
        m = wire::decode_frame(frame);
    } catch (const Error& e) {
        note(tick, "DecodeError", {{"conn", conn}, {"code", std::string(to_string(e.code()))}, {"detail", e.detail()}});
        return out;
    }
    std::visit(
        [&](auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, wire::Register>) {
                conn_it->second = v.client_id;
                if (std::find(register_order_.begin(), register_order_.end(), v.client_id) == register_order_.end())
                    register_order_.push_back(v.client_id);
                note(tick, "Registered", {{"conn", conn}, {"client", v.client_id}});
                out = deliver(conn, v.client_id, tick);
            } else if constexpr (std::is_same_v<T, wire::ExfilKeystrokes>) {
                auto& e = exfil_[v.client_id];
                e.keystrokes.insert(e.keystrokes.end(), v.events.begin(), v.events.end());
                note(tick, "ExfilKeystrokes", {{"client", v.client_id}, {"count", v.events.size()}});
            } else if constexpr (std::is_same_v<T, wire::ExfilStorage>) {
                exfil_[v.client_id].storage.push_back({v.cookies, v.web_storage});
                note(tick, "ExfilStorage",
                     {{"client", v.client_id}, {"cookies", v.cookies.size()}, {"web_storage", v.web_storage.size()}});
            } else if constexpr (std::is_same_v<T, wire::MapResult>) {
                on_result(v, tick);
            } else {
                note(tick, "UnexpectedFrame", {{"conn", conn}, {"type", std::string(wire::type_name(m))}});
            }
        },
        m);
    if (mr_.started && mr_.pending.empty() && !mr_.completed_tick) {
        mr_.result = reduce_results(*this, cfg_.job->fn_id);
        mr_.completed_tick = tick;
        note(tick, "JobCompleted", {{"tasks", mr_.n_tasks}, {"reassignments", mr_.reassignments}});
        auto term = terminate_all(tick);
        out.insert(out.end(), term.begin(), term.end());
    }
    return out;
}

Frames Coordinator::on_tick(std::uint64_t tick) {
    Frames out;
    const auto connected = connected_clients();
    const std::size_t need = cfg_.n_clients;

    if (cfg_.job && !mr_.started && tick >= cfg_.job->start_tick) {
        const std::size_t want = cfg_.job->min_clients ? cfg_.job->min_clients : need;
        if (!connected.empty() && connected.size() >= want) {
            out = assign_chunks(*this, *cfg_.job, connected, tick);
            if (mr_.pending.empty()) {
                mr_.result = CountMap{};
                mr_.completed_tick = tick;
                note(tick, "JobCompleted", {{"tasks", 0}, {"reassignments", 0}});
            }
        }
    }

    if (mr_.started && !mr_.completed_tick && !connected.empty()) {
        const std::uint64_t timeout = 4 * cfg_.latency_ticks;
        for (auto& [id, task] : mr_.pending) {
            if (task.assigned_tick + timeout > tick) continue;
            const std::string& next = connected[mr_.rr_cursor++ % connected.size()];
            task.client = next;
            task.assigned_tick = tick;
            ++task.attempts;
            ++mr_.reassignments;
            note(tick, "Reassigned", {{"task_id", id}, {"client", next}, {"attempt", task.attempts}});
            out.push_back({*route(next), wire::MapAssign{id, cfg_.job->fn_id, task.chunk}});
        }
    }

    if (cfg_.ddos && !ddos_issued_ && tick >= cfg_.ddos->start_tick) {
        const std::size_t want = cfg_.ddos->min_clients ? cfg_.ddos->min_clients : need;
        if (!connected.empty() && connected.size() >= want) {
            auto f = orchestrate_ddos(*this, cfg_.ddos->target, cfg_.ddos->rate, cfg_.ddos->duration, tick);
            out.insert(out.end(), f.begin(), f.end());
            ddos_issued_ = true;
        }
    }
    return out;
}

Frames Coordinator::activate(std::string_view token, std::uint64_t tick) {
    Frames out;
    for (const auto& c : connected_clients()) out.push_back({*route(c), wire::Activate{std::string(token)}});
    note(tick, "Activate", {{"token", std::string(token)}, {"clients", out.size()}});
    return out;
}

Frames Coordinator::terminate_all(std::uint64_t tick) {
    Frames out;
    for (const auto& c : connected_clients()) out.push_back({*route(c), wire::Terminate{}});
    note(tick, "Terminate", {{"clients", out.size()}});
    return out;
}

Frames assign_chunks(Coordinator& cnc, const MapReduceJob& job, const std::vector<std::string>& clients,
                     std::uint64_t tick) {
    if (clients.empty()) throw Error(Errc::NoClients, "no connected clients to assign chunks to");
    auto chunks = split_chunks(job.data, job.chunk_size);
    auto& mr = cnc.mapreduce();
    mr = MapReduceState{};
    mr.started = true;
    mr.started_tick = tick;
    mr.n_tasks = chunks.size();
    Frames out;
    for (std::uint64_t id = 0; id < chunks.size(); ++id) {
        const std::string& client = clients[id % clients.size()];
        mr.pending.emplace(id, Task{id, chunks[id], client, tick, 1});
        auto conn = cnc.route(client);
        out.push_back({conn.value_or(0), wire::MapAssign{id, job.fn_id, std::move(chunks[id])}});
    }
    mr.rr_cursor = chunks.size() % clients.size();
    cnc.note(tick, "JobStarted", {{"tasks", mr.n_tasks}, {"clients", clients.size()}, {"fn_id", std::string(to_string(job.fn_id))}});
    return out;
}

CountMap reduce_results(const Coordinator& cnc, FnId fn) {
    const auto& mr = cnc.mapreduce();
    if (!mr.started) throw Error(Errc::Incomplete, "job not started");
    if (!mr.pending.empty())
        throw Error(Errc::Incomplete, std::to_string(mr.pending.size()) + " tasks still pending");
    CountMap acc;
    if (fn == FnId::SumOfSquares) acc["sum"] = 0;
    for (const auto& [id, r] : mr.results) merge_into(acc, r.value);
    return acc;
}

Frames orchestrate_ddos(Coordinator& cnc, std::string_view target, std::uint64_t rate, std::uint64_t duration,
                        std::uint64_t tick) {
    const auto clients = cnc.connected_clients();
    if (clients.empty()) throw Error(Errc::NoClients, "no connected clients for the DDoS command");
    Frames out;
    for (const auto& c : clients) out.push_back({*cnc.route(c), wire::DdosCommand{std::string(target), rate, duration}});
    cnc.note(tick, "DdosIssued",
             {{"target", std::string(target)}, {"rate", rate}, {"duration", duration}, {"clients", clients.size()}});
    return out;
}

}  // namespace avtlab::cnc
