#pragma once
#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace dronet {

// Runs fn(i) for i in [0,n). Callers must only write to i-disjoint storage;
// reductions are merged serially by the caller so results do not depend on
// thread count or scheduling.
inline void parallel_samples(int n, const std::function<void(int)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    unsigned workers = hw < static_cast<unsigned>(n) ? hw : static_cast<unsigned>(n);
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace dronet
