/**
 * @file payload.hpp
 * @brief Instruction DSL standing in for injected JavaScript.
 *
 * Payloads describe behavior (open a socket, hook keys, spawn a worker, ...)
 * without being executable code. client_sim interprets them. The obfuscation
 * transform is seed-keyed and reversible: every seed gives different bytes
 * and the same normalized payload.
 */
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "avtlab/wire.hpp"

namespace avtlab::payload {

struct Instruction;
using InstructionList = std::vector<Instruction>;

enum class SendWhat { Keystrokes, Storage, MapResult };
std::string_view to_string(SendWhat w) noexcept;

struct OpenSocket {
    std::string url;
    bool operator==(const OpenSocket&) const = default;
};
struct HookKeystrokes {
    bool operator==(const HookKeystrokes&) const = default;
};
struct ReadCookies {
    bool operator==(const ReadCookies&) const = default;
};
struct ReadWebStorage {
    bool operator==(const ReadWebStorage&) const = default;
};
struct Send {
    std::string channel_url;
    SendWhat what = SendWhat::Storage;
    bool operator==(const Send&) const = default;
};
struct SpawnWorkerFromBlob {
    std::string script_origin_url;
    InstructionList inner;
    bool operator==(const SpawnWorkerFromBlob&) const;
};
struct RegisterServiceWorker {
    InstructionList inner;
    bool operator==(const RegisterServiceWorker&) const;
};
struct ComputeMap {
    FnId fn_id = FnId::WordCount;
    bool operator==(const ComputeMap&) const = default;
};
struct HttpFlood {
    std::string target;
    std::uint64_t rate = 1;
    std::uint64_t duration = 1;
    bool operator==(const HttpFlood&) const = default;
};

struct Instruction {
    std::variant<OpenSocket, HookKeystrokes, ReadCookies, ReadWebStorage, Send,
                 SpawnWorkerFromBlob, RegisterServiceWorker, ComputeMap, HttpFlood>
        op;
    bool operator==(const Instruction&) const = default;
};

/// Op name as used in the JSON grammar, e.g. "OpenSocket".
std::string_view op_name(const Instruction& i) noexcept;

struct Payload {
    std::string payload_id;
    InstructionList instructions;
    TriggerSpec trigger = Immediate{};
    bool operator==(const Payload&) const = default;
};

/// Throws Error(InvalidPayload) naming the first violated rule:
///  - payload_id and instruction list non-empty
///  - at most one RegisterServiceWorker, top level only
///  - Send names a channel opened earlier in the same list
///  - worker/service-worker bodies use no DOM-only ops (HookKeystrokes,
///    ReadCookies, ReadWebStorage); service-worker bodies spawn no workers
///  - HttpFlood rate and duration >= 1; OnEvent token non-empty
void validate(const Payload& p);
/// Validation of a bare instruction list as a page-level script body.
void validate_script(const InstructionList& list);

nlohmann::json to_json(const Payload& p);
nlohmann::json to_json(const InstructionList& list);
Payload payload_from_json(const nlohmann::json& j);
InstructionList instructions_from_json(const nlohmann::json& j);

/// Reads a payload source file (same JSON grammar). Validates it.
Payload load_payload_file(const std::string& path);

struct ObfuscatedBlob {
    std::string bytes;
    std::uint64_t seed = 0;
    bool operator==(const ObfuscatedBlob&) const = default;

    /// Recovers the seed from the blob header. Throws Error(CorruptBlob).
    static ObfuscatedBlob from_bytes(std::string bytes);
};

/// Serialize, rename identifiers and enum tokens, shuffle field order and
/// substitute bytes, all keyed by seed. Deterministic in (p, seed).
ObfuscatedBlob obfuscate(const Payload& p, std::uint64_t seed);

/// Exact inverse of obfuscate. Throws Error(CorruptBlob).
Payload normalize(const ObfuscatedBlob& b);

using Digest = std::array<std::uint8_t, 32>;
/// SHA-256 over the blob bytes.
Digest signature(const ObfuscatedBlob& b);
Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& d);

/// Default C&C endpoint the builtin payloads talk to.
inline constexpr std::string_view kDefaultCncUrl = "ws://cnc.avtlab.example:8080/KeyCookieLog.js";
inline constexpr std::string_view kDefaultCdnScriptUrl = "https://cdn.avtlab.example:443/foo.js";
inline constexpr std::string_view kDefaultFloodTarget = "http://target.example:80/";

/// keycookielog, ddos_bot, map_worker, blob_worker.
const std::map<std::string, Payload>& builtin_payloads();
std::optional<Payload> builtin_payload(std::string_view name);

/// Plain JavaScript-looking rendering of a script body. Used for files at
/// rest (served static assets, persisted service-worker scripts); it only
/// names the benign browser APIs each instruction relies on.
std::string render_script(const InstructionList& list);
/// Rendering of the script file a service-worker registration persists.
std::string render_service_worker(const InstructionList& inner);

}  // namespace avtlab::payload
