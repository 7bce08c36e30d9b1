#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace rgplan {

inline unsigned hardware_threads() {
    if (const char* env = std::getenv("RGPLAN_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so the
// result is independent of the thread count; callers that reduce must do so
// in index order after the loop.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned n_threads = 0) {
    if (n == 0) return;
    unsigned t = n_threads ? n_threads : hardware_threads();
    if (t > n) t = static_cast<unsigned>(n);
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(t);
    for (unsigned w = 0; w < t; ++w) {
        workers.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += t) fn(i);
        });
    }
    for (auto& th : workers) th.join();
}

}  // namespace rgplan
