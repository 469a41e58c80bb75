/**
 * @file client_sim.hpp
 * @brief Deterministic state machine of one victim browser.
 *
 * Models page contexts, dedicated workers spawned from blobs, service
 * workers, sockets, the socket-to-script injection path and a filesystem
 * write log. Every state change appends a record to the event log.
 *
 * Lifetimes:
 *   - injected scripts and page sockets die with their page (Navigate)
 *   - workers die with their parent page or on BrowserClose
 *   - service workers survive both and die on MachineRestart or Terminate
 *
 * Operations that can fail leave the state untouched when they throw.
 */
#pragma once

#include <compare>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "avtlab/error.hpp"
#include "avtlab/event_log.hpp"
#include "avtlab/payload.hpp"
#include "avtlab/wire.hpp"

namespace avtlab::client {

struct Origin {
    std::string scheme;
    std::string host;
    std::uint16_t port = 0;

    auto operator<=>(const Origin&) const = default;

    /// "scheme://host:port"
    std::string str() const;
    /// Accepts "scheme://host[:port][/path]". Throws Error(InvalidOrigin).
    static Origin parse(std::string_view url);
};

/// Same-origin test; ws/wss compare equal to http/https on the same host.
bool same_origin(const Origin& a, const Origin& b);

using PageId = std::uint32_t;
using WorkerId = std::uint32_t;
using SwId = std::uint32_t;
using SocketId = std::uint32_t;

enum class ContextKind { Page, Worker, ServiceWorker };

struct ContextRef {
    ContextKind kind = ContextKind::Page;
    std::uint32_t id = 0;
    auto operator<=>(const ContextRef&) const = default;
    /// "page:0", "worker:1", "sw:0"
    std::string str() const;
};

/// What an execution context has accumulated by running instructions.
struct ContextRuntime {
    struct Flood {
        std::string target;
        std::uint64_t rate = 0;
        std::uint64_t remaining = 0;  // ticks still to emit after the current one
    };
    std::set<FnId> map_fns;
    std::optional<SocketId> result_channel;
    bool cookies_read = false;
    bool storage_read = false;
    std::vector<Flood> floods;
    std::optional<std::string> cnc_origin;  // C&C whose code runs here
};

enum class ScriptSource { Static, SocketInjected };
std::string_view to_string(ScriptSource s) noexcept;

struct InjectedScript {
    std::string script_id;
    ScriptSource source = ScriptSource::Static;
    std::string payload_ref;
};

/// A script served with the page. Its instructions run at page load.
struct StaticScript {
    std::string script_id;
    payload::InstructionList instructions;
};

struct PageContext {
    PageId page_id = 0;
    Origin origin;
    std::vector<InjectedScript> injected_scripts;
    bool open = true;
    ContextRuntime rt;
};

enum class WorkerLifecycle { Running, Terminated };

struct WorkerState {
    WorkerId worker_id = 0;
    PageId parent_page = 0;
    Origin script_origin;
    WorkerLifecycle lifecycle = WorkerLifecycle::Running;
    payload::InstructionList inner_instructions;
    bool body_done = false;
    ContextRuntime rt;
};

enum class SwLifecycle { Registered, Running, Completed, Killed };
std::string_view to_string(SwLifecycle s) noexcept;

struct ServiceWorkerState {
    SwId sw_id = 0;
    PageId registering_page = 0;
    Origin registering_page_origin;
    SwLifecycle lifecycle = SwLifecycle::Registered;
    std::string persist_file;
    payload::InstructionList inner_instructions;
    bool pending_sync = true;
    std::uint64_t registered_tick = 0;
    std::string registering_payload;
    std::string script_id;
    bool body_done = false;
    ContextRuntime rt;
};

inline constexpr std::string_view kCauseServiceWorker = "service_worker_registration";
inline constexpr std::string_view kCauseControlPlant = "control_plant";

struct FileWrite {
    std::string path;
    std::string cause;
    std::uint64_t tick = 0;
    std::string content;
    std::optional<SwId> sw;
};

struct SocketHandle {
    SocketId socket_id = 0;
    std::string url;
    Origin origin;
    ContextRef owner;
};

struct PendingPayload {
    PageId page = 0;
    std::string payload_id;
    payload::ObfuscatedBlob blob;
    TriggerSpec trigger;
    std::string cnc_origin;
};

struct VictimData {
    StringMap cookies;
    StringMap web_storage;
};

struct ClientPolicy {
    std::uint64_t flush_every = 16;   // keystrokes per ExfilKeystrokes frame
    std::uint64_t flush_period = 8;   // also flush on ticks that are multiples of this
    bool plant_delivered_blobs = false;  // control runs: write delivered code to disk
};

struct BrowserState {
    std::string client_id;
    std::vector<PageContext> pages;
    std::vector<WorkerState> workers;
    std::vector<ServiceWorkerState> service_workers;
    std::vector<FileWrite> filesystem_log;
    std::vector<LogRecord> event_log;
    std::vector<SocketHandle> open_sockets;
    bool keystroke_hooked = false;
    std::uint64_t clock = 0;

    VictimData victim;
    ClientPolicy policy;
    std::vector<PendingPayload> pending;
    std::optional<PageId> hook_page;
    std::vector<KeystrokeEvent> key_buffer;
    std::optional<SocketId> key_channel;
    std::deque<wire::MapAssign> map_inbox;

    std::uint64_t next_seq = 0;
    SocketId next_socket = 0;
    std::uint32_t next_script = 0;
};

BrowserState make_browser(std::string client_id, VictimData victim = {}, ClientPolicy policy = {});

/// Traffic a client operation produced; the network layer routes it.
struct Outbound {
    enum class Kind { Connect, Frame, Close, HttpRequest };
    Kind kind = Kind::Frame;
    SocketId socket = 0;
    std::string url;  // socket url, or request target for HttpRequest
    std::optional<wire::Message> message;
};
using Outbox = std::vector<Outbound>;

struct Keystroke {
    std::string key;
};
struct ChatMessage {
    std::string text;
};
/// Navigates the given page (most recently opened live page if absent) away.
struct Navigate {
    std::optional<PageId> page;
};
struct BrowserClose {};
struct MachineRestart {};
using UserEvent = std::variant<Keystroke, ChatMessage, Navigate, BrowserClose, MachineRestart>;

nlohmann::json user_event_to_json(const UserEvent& e);

// --- operations -------------------------------------------------------------

/// Throws DuplicatePage if a live page already has this origin, or
/// InvalidPayload if a static script is malformed.
PageId open_page(BrowserState& s, const Origin& origin, const std::vector<StaticScript>& scripts,
                 Outbox& out);

/// Handles one frame arriving on an open socket. Throws UnknownSocket, the
/// wire decode errors, or errors raised by an immediate injection.
void receive_frame(BrowserState& s, SocketId socket, std::string_view frame, Outbox& out);

/// Normalizes the blob and runs it on the page's main thread. Throws
/// UnknownPage, CorruptBlob, DuplicateRegistration, SendWithoutSocket.
void inject_script(BrowserState& s, PageId page, const payload::ObfuscatedBlob& blob, Outbox& out);

/// Cross-origin script origins are accepted and logged as CrossOriginImport.
WorkerId spawn_worker_from_blob(BrowserState& s, PageId page, std::string_view script_origin_url,
                                const payload::InstructionList& inner, Outbox& out);

/// Registers a service worker whose sync event fires one tick later.
/// Throws DuplicateRegistration if a live service worker was already
/// registered by the same payload from the same origin.
SwId register_service_worker(BrowserState& s, PageId page, const payload::InstructionList& inner,
                             std::string_view registering_payload, Outbox& out);

void deliver_user_event(BrowserState& s, const UserEvent& e, Outbox& out);

/// Runs one instruction in a live context. Throws SendWithoutSocket when a
/// Send names no open socket of that context.
void execute_instruction(BrowserState& s, ContextRef ctx, const payload::Instruction& ins, Outbox& out);

/// Moves the clock to `tick` and performs tick-boundary work: pending
/// service-worker sync events, AtTick triggers, flood batches and periodic
/// keystroke flushes.
void advance_clock(BrowserState& s, std::uint64_t tick, Outbox& out);

/// The peer closed a socket (e.g. the server went away).
void socket_closed(BrowserState& s, SocketId socket);

/// Records a failed operation in the event log.
void log_fault(BrowserState& s, const Error& e);

// --- queries ----------------------------------------------------------------

bool is_live(const BrowserState& s, ContextRef ctx);
const PageContext* find_page(const BrowserState& s, PageId id);
std::size_t running_workers(const BrowserState& s);

}  // namespace avtlab::client
