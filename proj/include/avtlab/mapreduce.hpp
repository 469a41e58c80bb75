#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "avtlab/wire.hpp"

namespace avtlab::cnc {

struct MapReduceJob {
    FnId fn_id = FnId::WordCount;
    std::string data;
    std::uint64_t chunk_size = 1;
    std::uint64_t start_tick = 0;
    /// Connected clients required before the job starts; 0 means all
    /// n_clients of the scenario.
    std::uint64_t min_clients = 0;
};

/// Greedy split on whitespace: tokens are re-joined with single spaces and a
/// chunk grows while it stays within chunk_size bytes. A token longer than
/// chunk_size becomes a chunk of its own, so no token is ever split.
/// Throws Error(ConfigInvalid) if chunk_size is 0.
std::vector<std::string> split_chunks(std::string_view data, std::uint64_t chunk_size);

/// WordCount: token -> occurrences. SumOfSquares: {"sum": sum of x*x} over
/// tokens that parse as unsigned decimal integers (others are skipped,
/// arithmetic wraps modulo 2^64).
CountMap map_chunk(FnId fn, std::string_view chunk);

/// Key-wise sum (wrapping), the reduce step for both functions.
void merge_into(CountMap& acc, const CountMap& part);

}  // namespace avtlab::cnc
