#include "avtlab/mapreduce.hpp"

#include <cctype>

#include "avtlab/error.hpp"

namespace avtlab::cnc {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

template <class F>
void for_each_token(std::string_view text, F&& f) {
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) f(text.substr(start, i - start));
    }
}

std::optional<std::uint64_t> parse_u64(std::string_view tok) {
    if (tok.empty() || tok.size() > 20) return std::nullopt;
    std::uint64_t v = 0;
    for (char c : tok) {
        if (c < '0' || c > '9') return std::nullopt;
        const std::uint64_t d = static_cast<std::uint64_t>(c - '0');
        if (v > (UINT64_MAX - d) / 10) return std::nullopt;
        v = v * 10 + d;
    }
    return v;
}

}  // namespace

std::vector<std::string> split_chunks(std::string_view data, std::uint64_t chunk_size) {
    if (chunk_size == 0) throw Error(Errc::ConfigInvalid, "chunk_size must be >= 1");
    std::vector<std::string> chunks;
    std::string cur;
    for_each_token(data, [&](std::string_view tok) {
        if (!cur.empty() && cur.size() + 1 + tok.size() <= chunk_size) {
            cur += ' ';
            cur += tok;
            return;
        }
        if (!cur.empty()) chunks.push_back(std::move(cur));
        cur.assign(tok);
    });
    if (!cur.empty()) chunks.push_back(std::move(cur));
    return chunks;
}

CountMap map_chunk(FnId fn, std::string_view chunk) {
    CountMap out;
    if (fn == FnId::WordCount) {
        for_each_token(chunk, [&](std::string_view tok) { ++out[std::string(tok)]; });
    } else {
        std::uint64_t sum = 0;
        for_each_token(chunk, [&](std::string_view tok) {
            if (auto v = parse_u64(tok)) sum += *v * *v;
        });
        out["sum"] = sum;
    }
    return out;
}

void merge_into(CountMap& acc, const CountMap& part) {
    for (const auto& [k, v] : part) acc[k] += v;
}

}  // namespace avtlab::cnc
