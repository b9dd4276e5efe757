#pragma once

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace mlta {

/// Runs fn(i) for i in [0, n) on up to `jobs` worker threads. Each task
/// writes results keyed by its own index, so the outcome is independent
/// of scheduling. The first exception (by task index) is rethrown after
/// all workers join.
template <typename Fn>
void parallel_for_index(int n, int jobs, Fn&& fn) {
    if (n <= 0) return;
    if (jobs <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(jobs, n);
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace mlta
