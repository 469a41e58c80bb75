/**
 * @file wire.hpp
 * @brief C&C <-> client message protocol.
 *
 * One Message per frame. A frame is a single compact JSON object with a
 * "type" discriminator and lexicographically sorted keys, so equal messages
 * always encode to identical bytes. The same frames travel over simulated
 * packets and over live WebSocket text messages.
 */
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace avtlab {

using StringMap = std::map<std::string, std::string>;
using CountMap = std::map<std::string, std::uint64_t>;

enum class FnId { WordCount, SumOfSquares };

std::string_view to_string(FnId fn) noexcept;
/// Throws Error(InvalidField) for unknown names.
FnId fn_id_from_string(std::string_view name);

/// When a delivered payload is allowed to run.
struct Immediate {
    bool operator==(const Immediate&) const = default;
};
struct OnEvent {
    std::string token;
    bool operator==(const OnEvent&) const = default;
};
struct AtTick {
    std::uint64_t tick = 0;
    bool operator==(const AtTick&) const = default;
};
using TriggerSpec = std::variant<Immediate, OnEvent, AtTick>;

nlohmann::json trigger_to_json(const TriggerSpec& t);
TriggerSpec trigger_from_json(const nlohmann::json& j);
std::string describe(const TriggerSpec& t);

struct KeystrokeEvent {
    std::string key;
    std::uint64_t tick = 0;
    bool operator==(const KeystrokeEvent&) const = default;
};

namespace wire {

struct Register {
    std::string client_id;
    bool operator==(const Register&) const = default;
};

struct PayloadDelivery {
    std::string payload_id;
    std::string code;  // obfuscated blob bytes
    TriggerSpec trigger;
    bool operator==(const PayloadDelivery&) const = default;
};

struct Activate {
    std::string trigger_token;
    bool operator==(const Activate&) const = default;
};

struct ExfilKeystrokes {
    std::string client_id;
    std::vector<KeystrokeEvent> events;
    bool operator==(const ExfilKeystrokes&) const = default;
};

struct ExfilStorage {
    std::string client_id;
    StringMap cookies;
    StringMap web_storage;
    bool operator==(const ExfilStorage&) const = default;
};

struct MapAssign {
    std::uint64_t task_id = 0;
    FnId fn_id = FnId::WordCount;
    std::string chunk;
    bool operator==(const MapAssign&) const = default;
};

struct MapResult {
    std::uint64_t task_id = 0;
    std::string client_id;
    CountMap value;
    bool operator==(const MapResult&) const = default;
};

struct DdosCommand {
    std::string target;
    std::uint64_t rate = 1;      // requests per tick, >= 1
    std::uint64_t duration = 1;  // ticks, >= 1
    bool operator==(const DdosCommand&) const = default;
};

struct Terminate {
    bool operator==(const Terminate&) const = default;
};

using Message = std::variant<Register, PayloadDelivery, Activate, ExfilKeystrokes, ExfilStorage,
                             MapAssign, MapResult, DdosCommand, Terminate>;

/// The "type" discriminator of a message, e.g. "PayloadDelivery".
std::string_view type_name(const Message& m) noexcept;

nlohmann::json to_json(const Message& m);
/// Throws Error(UnknownType | MissingField | InvalidField).
Message from_json(const nlohmann::json& j);

/// Deterministic: equal messages encode to byte-identical frames.
std::string encode_frame(const Message& m);

/// Inverse of encode_frame. Never crashes on arbitrary input; every failure
/// is an Error with code MalformedJson (detail carries the byte offset),
/// UnknownType, MissingField or InvalidField.
Message decode_frame(std::string_view frame);

}  // namespace wire
}  // namespace avtlab
