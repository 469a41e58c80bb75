#include "avtlab/event_log.hpp"

#include "avtlab/error.hpp"

namespace avtlab {

using nlohmann::json;

namespace {
bool reserved(std::string_view key) {
    return key == "tick" || key == "seq" || key == "client" || key == "kind";
}
}  // namespace

json LogRecord::to_json() const {
    json j = fields.is_object() ? fields : json::object();
    j["tick"] = tick;
    j["seq"] = seq;
    j["client"] = client;
    j["kind"] = kind;
    return j;
}

LogRecord LogRecord::from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::MalformedStream, "record is not an object");
    auto need = [&](const char* k) -> const json& {
        auto it = j.find(k);
        if (it == j.end()) throw Error(Errc::MalformedStream, std::string("record lacks '") + k + "'");
        return *it;
    };
    const json& tick = need("tick");
    const json& seq = need("seq");
    const json& client = need("client");
    const json& kind = need("kind");
    auto is_u64 = [](const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); };
    if (!is_u64(tick) || !is_u64(seq) || !client.is_string() ||
        !kind.is_string())
        throw Error(Errc::MalformedStream, "record header fields mistyped");
    LogRecord r;
    r.tick = tick.get<std::uint64_t>();
    r.seq = seq.get<std::uint64_t>();
    r.client = client.get<std::string>();
    r.kind = kind.get<std::string>();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!reserved(it.key())) r.fields[it.key()] = *it;
    return r;
}

std::string to_ndjson(const std::vector<LogRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.to_json().dump();
        out += '\n';
    }
    return out;
}

std::vector<LogRecord> parse_ndjson(std::string_view text) {
    std::vector<LogRecord> out;
    NdjsonReader reader([&](const LogRecord& r) { out.push_back(r); });
    reader.feed(text);
    reader.finish();
    return out;
}

void NdjsonReader::feed(std::string_view chunk) {
    std::size_t start = 0;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
        if (chunk[i] != '\n') continue;
        if (partial_.empty()) {
            emit_line(chunk.substr(start, i - start));
        } else {
            partial_.append(chunk.substr(start, i - start));
            std::string line = std::move(partial_);
            partial_.clear();
            emit_line(line);
        }
        start = i + 1;
    }
    partial_.append(chunk.substr(start));
}

void NdjsonReader::finish() {
    if (!partial_.empty()) {
        std::string line = std::move(partial_);
        partial_.clear();
        emit_line(line);
    }
}

void NdjsonReader::emit_line(std::string_view line) {
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    json j;
    try {
        j = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedStream,
                    "line " + std::to_string(line_no_) + ": byte " + std::to_string(e.byte));
    }
    sink_(LogRecord::from_json(j));
}

}  // namespace avtlab
