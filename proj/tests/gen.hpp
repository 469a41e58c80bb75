// Hand-rolled generators shared by the property tests and the acceptance
// binary. Everything is driven by avtlab::Rng so failures replay from a seed.
#pragma once

#include <string>
#include <vector>

#include "avtlab/payload.hpp"
#include "avtlab/rng.hpp"
#include "avtlab/wire.hpp"

namespace gen {

using avtlab::Rng;

inline std::string word(Rng& r, std::size_t max_len = 8) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string s(r.range(1, max_len), 'a');
    for (auto& c : s) c = alphabet[r.below(alphabet.size())];
    return s;
}

// Any bytes except NUL, including quotes, backslashes, controls and UTF-8.
inline std::string text(Rng& r, std::size_t max_len = 24) {
    static const std::vector<std::string> pieces = {"a", "Z", "7", " ", "\"", "\\", "\n", "\t", "\x01", "{", "}",
                                                    ":", ",", "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x94\x91"};
    std::string s;
    const auto n = r.below(max_len + 1);
    for (std::uint64_t i = 0; i < n; ++i) s += r.pick(pieces);
    return s;
}

inline std::uint64_t u64(Rng& r) {
    switch (r.below(4)) {
        case 0: return 0;
        case 1: return r.below(100);
        case 2: return ~std::uint64_t{0} - r.below(3);
        default: return r.next();
    }
}

inline avtlab::StringMap string_map(Rng& r) {
    avtlab::StringMap m;
    const auto n = r.below(4);
    for (std::uint64_t i = 0; i < n; ++i) m[text(r, 6)] = text(r);
    return m;
}

inline avtlab::TriggerSpec trigger(Rng& r) {
    switch (r.below(3)) {
        case 0: return avtlab::Immediate{};
        case 1: return avtlab::OnEvent{word(r)};
        default: return avtlab::AtTick{u64(r)};
    }
}

inline avtlab::wire::Message message(Rng& r) {
    using namespace avtlab::wire;
    switch (r.below(9)) {
        case 0: return Register{text(r)};
        case 1: return PayloadDelivery{text(r), text(r, 64), trigger(r)};
        case 2: return Activate{text(r)};
        case 3: {
            ExfilKeystrokes m{text(r), {}};
            const auto n = r.below(5);
            for (std::uint64_t i = 0; i < n; ++i) m.events.push_back({text(r, 3), u64(r)});
            return m;
        }
        case 4: return ExfilStorage{text(r), string_map(r), string_map(r)};
        case 5: return MapAssign{u64(r), r.bernoulli(0.5) ? avtlab::FnId::WordCount : avtlab::FnId::SumOfSquares, text(r)};
        case 6: {
            MapResult m{u64(r), text(r), {}};
            const auto n = r.below(4);
            for (std::uint64_t i = 0; i < n; ++i) m.value[text(r, 6)] = u64(r);
            return m;
        }
        case 7: return DdosCommand{text(r), r.range(1, 1000), r.range(1, 1000)};
        default: return Terminate{};
    }
}

inline std::string url(Rng& r) {
    static const std::vector<std::string> schemes = {"ws", "wss", "http", "https"};
    return r.pick(schemes) + "://" + word(r) + ".example:" + std::to_string(r.range(1, 65535)) + "/" + word(r);
}

// Body of a worker or service worker: no DOM ops, no nested registration.
inline avtlab::payload::InstructionList background_body(Rng& r, bool allow_spawn) {
    using namespace avtlab::payload;
    InstructionList list;
    std::vector<std::string> channels;
    const auto n = r.range(1, 4);
    for (std::uint64_t i = 0; i < n; ++i) {
        switch (r.below(allow_spawn ? 5 : 4)) {
            case 0: {
                channels.push_back(url(r));
                list.push_back({OpenSocket{channels.back()}});
                break;
            }
            case 1:
                if (!channels.empty()) list.push_back({Send{r.pick(channels), SendWhat::MapResult}});
                else list.push_back({ComputeMap{avtlab::FnId::WordCount}});
                break;
            case 2:
                list.push_back({ComputeMap{r.bernoulli(0.5) ? avtlab::FnId::WordCount : avtlab::FnId::SumOfSquares}});
                break;
            case 3: list.push_back({HttpFlood{url(r), r.range(1, 5), r.range(1, 3)}}); break;
            default: list.push_back({SpawnWorkerFromBlob{url(r), background_body(r, false)}}); break;
        }
    }
    return list;
}

inline avtlab::payload::Payload payload(Rng& r, bool allow_sw = true) {
    using namespace avtlab::payload;
    Payload p;
    p.payload_id = word(r);
    p.trigger = trigger(r);
    std::vector<std::string> channels;
    bool sw = false;
    const auto n = r.range(1, 7);
    for (std::uint64_t i = 0; i < n; ++i) {
        switch (r.below(8)) {
            case 0: {
                channels.push_back(url(r));
                p.instructions.push_back({OpenSocket{channels.back()}});
                break;
            }
            case 1: p.instructions.push_back({HookKeystrokes{}}); break;
            case 2: p.instructions.push_back({ReadCookies{}}); break;
            case 3: p.instructions.push_back({ReadWebStorage{}}); break;
            case 4:
                if (!channels.empty()) {
                    static const SendWhat whats[] = {SendWhat::Keystrokes, SendWhat::Storage, SendWhat::MapResult};
                    p.instructions.push_back({Send{r.pick(channels), whats[r.below(3)]}});
                }
                break;
            case 5: p.instructions.push_back({SpawnWorkerFromBlob{url(r), background_body(r, false)}}); break;
            case 6:
                if (allow_sw && !sw) {
                    sw = true;
                    p.instructions.push_back({RegisterServiceWorker{background_body(r, false)}});
                }
                break;
            default: p.instructions.push_back({HttpFlood{url(r), r.range(1, 5), r.range(1, 3)}}); break;
        }
    }
    if (p.instructions.empty()) p.instructions.push_back({HookKeystrokes{}});
    return p;
}

}  // namespace gen
