#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

#include "robtrack/types.hpp"

namespace robtrack {

/// Rows per work unit. Chunk boundaries depend only on the row count, never on
/// the thread count, so per-chunk seeding and per-chunk partial sums are
/// reproducible on any machine.
inline constexpr Index kChunkRows = 8192;

inline Index chunk_count(Index rows, Index chunk = kChunkRows) {
    return rows <= 0 ? 0 : (rows + chunk - 1) / chunk;
}

/// Calls fn(chunk_index, begin, end) for each fixed-size row chunk of [0, rows).
/// Chunks may run concurrently; fn must only write chunk-local state.
template <class Fn>
void for_each_chunk(Index rows, Fn&& fn, Index chunk = kChunkRows) {
    const Index chunks = chunk_count(rows, chunk);
    const auto hw = static_cast<Index>(std::max(1u, std::thread::hardware_concurrency()));
    const Index workers = std::min(hw, chunks);
    auto run_range = [&](Index first, Index stride) {
        for (Index c = first; c < chunks; c += stride) {
            const Index begin = c * chunk;
            fn(c, begin, std::min(rows, begin + chunk));
        }
    };
    if (workers <= 1) {
        run_range(0, 1);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (Index w = 1; w < workers; ++w) pool.emplace_back(run_range, w, workers);
    run_range(0, workers);
}

}  // namespace robtrack
