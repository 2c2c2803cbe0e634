#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mlsr {

// Thread count: MLSR_THREADS if set, else hardware concurrency.
inline int parallel_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("MLSR_THREADS")) {
            const int v = std::atoi(env);
            if (v > 0) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc > 0 ? static_cast<int>(hc) : 1;
    }();
    return n;
}

// Static-partition parallel loop over [0, n). Each index is processed by
// exactly one worker with the same inner arithmetic order as the serial loop,
// so results are bit-identical for any thread count. Callers must only write
// to disjoint outputs per index range.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    const int threads = parallel_threads();
    if (threads <= 1 || n < 256) {
        body(0, n);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) {
        const std::int64_t b = w * chunk;
        const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    body(0, std::min<std::int64_t>(chunk, n));
    for (auto& t : pool) t.join();
}

}  // namespace mlsr
