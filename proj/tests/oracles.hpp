// Sequential reference implementations, written independently of the
// library code they check.
#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>
#include <string>

#include "avtlab/rng.hpp"
#include "avtlab/wire.hpp"

namespace oracle {

inline avtlab::CountMap word_count(const std::string& data) {
    avtlab::CountMap m;
    std::istringstream in(data);
    std::string tok;
    while (in >> tok) ++m[tok];
    return m;
}

inline avtlab::CountMap sum_of_squares(const std::string& data) {
    std::uint64_t sum = 0;
    std::istringstream in(data);
    std::string tok;
    while (in >> tok) {
        if (!std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
        std::uint64_t v = 0;
        const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size()) continue;
        sum += v * v;
    }
    return {{"sum", sum}};
}

inline avtlab::CountMap run(avtlab::FnId fn, const std::string& data) {
    return fn == avtlab::FnId::WordCount ? word_count(data) : sum_of_squares(data);
}

// Whitespace-separated text of about `bytes` bytes mixing words and numbers.
inline std::string job_text(avtlab::Rng& r, std::size_t bytes) {
    static const char* words[] = {"alpha", "beta", "gamma", "delta", "fox", "dog", "a", "the", "mine", "block"};
    static const char* spaces[] = {" ", " ", " ", "  ", "\n", "\t"};
    std::string s;
    while (s.size() < bytes) {
        if (r.bernoulli(0.4)) s += std::to_string(r.bernoulli(0.05) ? r.next() : r.below(100000));
        else s += words[r.below(10)];
        s += spaces[r.below(6)];
    }
    return s;
}

}  // namespace oracle
