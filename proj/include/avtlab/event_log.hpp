#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace avtlab {

/// One behavior observable. Serialized as a flat NDJSON object
/// `{"client","kind","seq","tick", ...fields}`; the detector reads the same
/// grammar.
struct LogRecord {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;
    std::string client;
    std::string kind;
    nlohmann::json fields = nlohmann::json::object();

    nlohmann::json to_json() const;
    /// Throws Error(MalformedStream) if tick/seq/client/kind are missing or
    /// mistyped.
    static LogRecord from_json(const nlohmann::json& j);

    bool operator==(const LogRecord&) const = default;
};

std::string to_ndjson(const std::vector<LogRecord>& records);
std::vector<LogRecord> parse_ndjson(std::string_view text);

/// Splits an NDJSON byte stream delivered in arbitrary chunks into records.
class NdjsonReader {
public:
    using Sink = std::function<void(const LogRecord&)>;
    explicit NdjsonReader(Sink sink) : sink_(std::move(sink)) {}

    void feed(std::string_view chunk);
    /// Flushes a trailing record that lacks a final newline.
    void finish();

private:
    void emit_line(std::string_view line);

    Sink sink_;
    std::string partial_;
    std::uint64_t line_no_ = 0;
};

}  // namespace avtlab
