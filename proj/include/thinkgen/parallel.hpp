#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace thinkgen {

// Worker cap from THINKGEN_LAB_THREADS; defaults to 1 (fully serial). Results
// must be written to per-index slots so the outcome is independent of the
// worker count.
inline int worker_count() {
    const char* env = std::getenv("THINKGEN_LAB_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    if (n < 1) n = 1;
    if (n > 64) n = 64;
    return n;
}

template <typename F>
void parallel_for(int n, F&& f) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (int i = w; i < n; i += workers) f(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace thinkgen
