#pragma once

// Index-sharded parallel loop. Each index writes only its own output slot,
// so results are identical for any worker count; FRANKENKIT_WORKERS pins
// the count when set.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace frankenkit {

inline std::size_t default_workers() {
    if (const char* env = std::getenv("FRANKENKIT_WORKERS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return std::size_t(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t workers = 0) {
    if (workers == 0) workers = default_workers();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (workers > n) workers = n;
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed.load()) std::rethrow_exception(error);
}

}  // namespace frankenkit
